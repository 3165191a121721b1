"""Linear programs, a bounded-variable simplex solver and Farkas dualization.

Problems are stated as

    minimize    c.x
    subject to  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper

with infinite bounds allowed.  ``solve`` dispatches to the in-house dense
simplex (``method="simplex"``) or to HiGHS through scipy
(``method="highs"``).
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

FEASTOL = 1e-7
OPTTOL = 1e-9


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


def _matrix(A, n: int):
    if A is None:
        return sp.csr_array((0, n))
    if sp.issparse(A):
        return sp.csr_array(A)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return sp.csr_array((0, n))
    return sp.csr_array(A)


class LinearProgram:
    """Immutable LP data in inequality/equality/bounds form."""

    def __init__(self, objective, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lower=None, upper=None):
        c = np.asarray(objective, dtype=float).ravel()
        n = c.size
        if n < 1:
            raise ValueError("a linear program needs at least one variable")
        self.objective = c
        self.A_ub = _matrix(A_ub, n)
        self.b_ub = np.asarray(b_ub if b_ub is not None else [], dtype=float).ravel()
        self.A_eq = _matrix(A_eq, n)
        self.b_eq = np.asarray(b_eq if b_eq is not None else [], dtype=float).ravel()
        self.lower = np.full(n, 0.0) if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
        self.upper = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
        for name, A, b in (("A_ub", self.A_ub, self.b_ub), ("A_eq", self.A_eq, self.b_eq)):
            if A.shape[1] != n or A.shape[0] != b.size:
                raise ValueError(f"{name} has shape {A.shape}, rhs length {b.size}, variables {n}")
        if np.any(self.lower > self.upper):
            raise ValueError("variable lower bound exceeds upper bound")
        for arr in (self.objective, self.b_ub, self.b_eq, self.lower, self.upper):
            arr.setflags(write=False)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def rows(self):
        """Yield ``(coefficients, relation, rhs)`` for every constraint row."""
        for A, b, rel in ((self.A_ub, self.b_ub, "<="), (self.A_eq, self.b_eq, "=")):
            dense = A.toarray()
            for i in range(A.shape[0]):
                yield dense[i], rel, float(b[i])

    def residual(self, x) -> float:
        """Largest constraint or bound violation at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.A_ub.shape[0]:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.A_eq.shape[0]:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq), initial=0.0)))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst

    def dump(self, stream=None) -> str:
        """Fixed-point text layout, one line per row.

        First line ``objective: c_1 ... c_n``; then one line per constraint
        ``a_1 ... a_n <=|= rhs``; then ``bounds: lo hi`` per variable.
        Numbers use ``%.17g``.
        """
        out = io.StringIO()
        fmt = lambda v: "%.17g" % v  # noqa: E731
        out.write("objective: " + " ".join(fmt(v) for v in self.objective) + "\n")
        for coeffs, rel, rhs in self.rows():
            out.write(" ".join(fmt(v) for v in coeffs) + f" {rel} {fmt(rhs)}\n")
        for lo, hi in zip(self.lower, self.upper):
            out.write(f"bounds: {fmt(lo)} {fmt(hi)}\n")
        text = out.getvalue()
        if stream is not None:
            stream.write(text)
        return text


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    value: float | None = None
    pivots: int = 0
    message: str = ""
    pivot_log: list = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def solve(lp: LinearProgram, method: str = "simplex", feastol: float = FEASTOL, opttol: float = OPTTOL,
          **kwargs) -> LpSolution:
    if method == "simplex":
        return DenseSimplex(lp, feastol=feastol, opttol=opttol, **kwargs).run()
    if method == "highs":
        return _solve_highs(lp, feastol=feastol)
    raise ValueError(f"unknown LP method {method!r}")


def _solve_highs(lp: LinearProgram, feastol: float) -> LpSolution:
    from scipy.optimize import linprog

    bounds = np.column_stack([lp.lower, lp.upper])
    bounds = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in bounds]
    res = linprog(
        lp.objective,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": min(feastol, 1e-7), "dual_feasibility_tolerance": 1e-9},
    )
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        return LpSolution(LpStatus.OPTIMAL, x, float(lp.objective @ x), message=res.message)
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, message=res.message)
    return LpSolution(LpStatus.NUMERICAL_FAILURE, message=res.message)


class DenseSimplex:
    """Two-phase primal simplex with bounded variables on a dense tableau.

    Every variable is shifted or split so it lives in ``[0, u]`` with ``u``
    possibly infinite; nonbasic variables sit at either bound.  Pricing is
    Dantzig's rule with lowest-index tie-breaks and switches to Bland's rule
    after a run of degenerate pivots, so the pivot sequence is a function of
    the input alone.
    """

    def __init__(self, lp: LinearProgram, feastol: float = FEASTOL, opttol: float = OPTTOL,
                 rule: str = "dantzig", max_pivots: int | None = None, record_pivots: bool = False,
                 refactor_every: int = 100, degenerate_switch: int = 50):
        if rule not in ("dantzig", "bland"):
            raise ValueError(f"unknown pivot rule {rule!r}")
        self.lp = lp
        self.feastol = feastol
        self.opttol = opttol
        self.rule = rule
        self.record = record_pivots
        self.refactor_every = refactor_every
        self.degenerate_switch = degenerate_switch
        self._standardize()
        m, n = self.A.shape
        self.max_pivots = max_pivots if max_pivots is not None else 50 * (m + n) + 1000
        self.pivots = 0
        self.log: list = []

    def _standardize(self):
        lp = self.lp
        n = lp.n_vars
        # column map: original var -> list of (std column, sign); plus a shift
        cols = []  # (orig index, sign)
        ubs = []
        shift = np.zeros(n)
        for j in range(n):
            lo, hi = lp.lower[j], lp.upper[j]
            if np.isfinite(lo):
                shift[j] = lo
                cols.append((j, 1.0))
                ubs.append(hi - lo)
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append((j, -1.0))
                ubs.append(np.inf)
            else:
                cols.append((j, 1.0))
                ubs.append(np.inf)
                cols.append((j, -1.0))
                ubs.append(np.inf)
        self.n_struct = len(cols)
        self.cols = cols
        self.shift = shift
        A_ub = lp.A_ub.toarray()
        A_eq = lp.A_eq.toarray()
        m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
        m = m_ub + m_eq
        n_std = self.n_struct + m_ub
        A = np.zeros((m, n_std))
        orig = np.vstack([A_ub, A_eq]) if m else np.zeros((0, n))
        for k, (j, s) in enumerate(cols):
            A[:, k] = s * orig[:, j]
        A[:m_ub, self.n_struct:] = np.eye(m_ub)
        b = np.concatenate([lp.b_ub, lp.b_eq]) - orig @ shift
        c = np.zeros(n_std)
        for k, (j, s) in enumerate(cols):
            c[k] = s * lp.objective[j]
        self.A = A
        self.b = b
        self.c = c
        self.u = np.array(ubs + [np.inf] * m_ub, dtype=float)
        self.const = float(lp.objective @ shift)

    # core machinery on a tableau over columns 0..N-1
    def _init_phase1(self):
        m, n = self.A.shape
        A = self.A.copy()
        b = self.b.copy()
        neg = b < 0
        A[neg] *= -1.0
        b[neg] *= -1.0
        self.N = n + m
        self.T = np.hstack([A, np.eye(m)])
        self.beta = b.copy()
        self.basis = np.arange(n, n + m)
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.ub = np.concatenate([self.u, np.full(m, np.inf)])
        self.A_full = np.hstack([A, np.eye(m)])
        self.b_full = b

    def _reduced_costs(self, cost):
        return cost - cost[self.basis] @ self.T

    def _refactor(self):
        B = self.A_full[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.A_full)
        except np.linalg.LinAlgError:
            return False
        xN = np.where(self.at_upper, self.ub, 0.0)
        xN[self.basis] = 0.0
        rhs = self.b_full - self.A_full @ xN
        self.beta = np.linalg.solve(B, rhs)
        return True

    def _iterate(self, cost, allowed):
        """Run primal simplex on ``cost`` over columns flagged in ``allowed``."""
        m = self.T.shape[0]
        d = self._reduced_costs(cost)
        degenerate_run = 0
        bland = self.rule == "bland"
        since_refactor = 0
        while True:
            if self.pivots >= self.max_pivots:
                return LpStatus.NUMERICAL_FAILURE
            is_basic = np.zeros(self.N, dtype=bool)
            is_basic[self.basis] = True
            cand_up = allowed & ~is_basic & ~self.at_upper & (d < -self.opttol)
            cand_dn = allowed & ~is_basic & self.at_upper & (d > self.opttol)
            cand = cand_up | cand_dn
            if not cand.any():
                return LpStatus.OPTIMAL
            if bland:
                j = int(np.flatnonzero(cand)[0])
            else:
                score = np.where(cand, np.abs(d), -1.0)
                j = int(np.argmax(score))
            s = 1.0 if cand_up[j] else -1.0
            alpha = s * self.T[:, j]
            theta = self.ub[j]
            leave = -1
            leave_to_upper = False
            tol = 1e-11
            ub_basic = self.ub[self.basis]
            lim = np.full(m, np.inf)
            pos = alpha > tol
            neg = (alpha < -tol) & np.isfinite(ub_basic)
            lim[pos] = self.beta[pos] / alpha[pos]
            lim[neg] = (self.beta[neg] - ub_basic[neg]) / alpha[neg]
            np.maximum(lim, 0.0, out=lim)
            if m:
                best = float(lim.min())
                if best < theta - 1e-12:
                    ties = np.flatnonzero(lim <= best + 1e-12)
                    leave = int(ties[np.argmin(self.basis[ties])])
                    theta = best
                    leave_to_upper = bool(neg[leave])
            if not np.isfinite(theta):
                return LpStatus.UNBOUNDED
            self.pivots += 1
            if self.record:
                self.log.append((j, leave if leave < 0 else int(self.basis[leave])))
            self.beta -= theta * alpha
            if leave < 0:
                # bound flip without a basis change
                self.at_upper[j] = not self.at_upper[j]
                degenerate_run = 0
                continue
            degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
            if degenerate_run >= self.degenerate_switch:
                bland = True
            entering_value = theta if s > 0 else self.ub[j] - theta
            old = self.basis[leave]
            self.at_upper[old] = leave_to_upper
            self.at_upper[j] = False
            self.beta[leave] = entering_value
            self.basis[leave] = j
            piv = self.T[leave, j]
            self.T[leave] /= piv
            col = self.T[:, j].copy()
            col[leave] = 0.0
            self.T -= np.outer(col, self.T[leave])
            d = d - d[j] * self.T[leave]
            since_refactor += 1
            if since_refactor >= self.refactor_every:
                since_refactor = 0
                if not self._refactor():
                    return LpStatus.NUMERICAL_FAILURE
                d = self._reduced_costs(cost)

    def run(self) -> LpSolution:
        m, n = self.A.shape
        self._init_phase1()
        if m:
            cost1 = np.concatenate([np.zeros(n), np.ones(m)])
            allowed = np.ones(self.N, dtype=bool)
            status = self._iterate(cost1, allowed)
            if status is LpStatus.NUMERICAL_FAILURE:
                return self._fail("pivot limit reached in phase 1")
            if status is LpStatus.UNBOUNDED:
                return self._fail("phase 1 reported unbounded")
            infeas = float(cost1[self.basis] @ self.beta)
            scale = max(1.0, float(np.max(np.abs(self.b), initial=0.0)))
            if infeas > self.feastol * scale:
                return LpSolution(LpStatus.INFEASIBLE, pivots=self.pivots, pivot_log=self.log)
            self._drive_out_artificials(n)
        allowed = np.zeros(self.N, dtype=bool)
        allowed[:n] = True
        cost2 = np.concatenate([self.c, np.zeros(self.N - n)])
        status = self._iterate(cost2, allowed)
        if status is LpStatus.NUMERICAL_FAILURE:
            return self._fail("pivot limit reached in phase 2")
        if status is LpStatus.UNBOUNDED:
            return LpSolution(LpStatus.UNBOUNDED, pivots=self.pivots, pivot_log=self.log)
        return self._extract(n)

    def _drive_out_artificials(self, n):
        for r in range(self.T.shape[0]):
            if self.basis[r] < n:
                continue
            row = self.T[r, :n].copy()
            is_basic = np.zeros(n, dtype=bool)
            is_basic[self.basis[self.basis < n]] = True
            row[is_basic] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size == 0:
                continue  # redundant row; the artificial stays basic at zero
            j = int(cand[0])
            xj = self.ub[j] if self.at_upper[j] else 0.0
            piv = self.T[r, j]
            self.T[r] /= piv
            col = self.T[:, j].copy()
            col[r] = 0.0
            self.T -= np.outer(col, self.T[r])
            # artificial sits at ~0, so the basic values move by at most roundoff
            self.beta[r] = xj
            self.at_upper[self.basis[r]] = False
            self.basis[r] = j
            self.at_upper[j] = False
        # keep artificials fixed at zero from here on
        self.ub[n:] = 0.0

    def _fail(self, message):
        return LpSolution(LpStatus.NUMERICAL_FAILURE, pivots=self.pivots, message=message, pivot_log=self.log)

    def _extract(self, n) -> LpSolution:
        self._refactor()
        xs = np.where(self.at_upper, self.ub, 0.0)
        xs[self.basis] = self.beta
        xs = xs[:n]
        x = self.shift.copy()
        for k, (j, s) in enumerate(self.cols):
            x[j] += s * xs[k]
        x = np.clip(x, self.lp.lower, self.lp.upper)
        if self.lp.residual(x) > self.feastol * max(1.0, float(np.max(np.abs(self.b), initial=0.0))):
            return self._fail(f"final residual {self.lp.residual(x):.3g} exceeds tolerance")
        return LpSolution(LpStatus.OPTIMAL, x, float(self.lp.objective @ x), pivots=self.pivots, pivot_log=self.log)


class LpBuilder:
    """Incremental assembly of an LP from named variable blocks."""

    def __init__(self):
        self.blocks: dict[str, slice] = {}
        self.lower: list[np.ndarray] = []
        self.upper: list[np.ndarray] = []
        self.n = 0
        self.ub_rows: list[sp.csr_array] = []
        self.ub_rhs: list[np.ndarray] = []
        self.eq_rows: list[sp.csr_array] = []
        self.eq_rhs: list[np.ndarray] = []
        self.cost: dict[str, np.ndarray] = {}

    def add_variables(self, name: str, count: int, lower=0.0, upper=np.inf) -> slice:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        sl = slice(self.n, self.n + count)
        self.blocks[name] = sl
        self.lower.append(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).copy())
        self.upper.append(np.broadcast_to(np.asarray(upper, dtype=float), (count,)).copy())
        self.n += count
        return sl

    def _rows(self, terms: dict[str, object], n_rows: int):
        parts = []
        for name, mat in terms.items():
            sl = self.blocks[name]
            if sp.issparse(mat):
                M = sp.coo_array(mat)
            else:
                M = sp.coo_array(np.asarray(mat, dtype=float).reshape(n_rows, sl.stop - sl.start))
            parts.append((M.row, M.col + sl.start, M.data))
        rows = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, int)
        cols = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, int)
        data = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)
        return rows, cols, data

    def add_ub(self, terms: dict[str, object], rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.ub_rows.append(self._rows(terms, rhs.size))
        self.ub_rhs.append(rhs)

    def add_eq(self, terms: dict[str, object], rhs):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self.eq_rows.append(self._rows(terms, rhs.size))
        self.eq_rhs.append(rhs)

    def minimize(self, name: str, coeffs):
        sl = self.blocks[name]
        self.cost[name] = np.broadcast_to(np.asarray(coeffs, dtype=float), (sl.stop - sl.start,)).copy()

    def _stack(self, chunks, rhs):
        if not chunks:
            return sp.csr_array((0, self.n)), np.zeros(0)
        offset = 0
        R, C, D = [], [], []
        for (r, c, d), b in zip(chunks, rhs):
            R.append(r + offset)
            C.append(c)
            D.append(d)
            offset += b.size
        A = sp.csr_array((np.concatenate(D), (np.concatenate(R), np.concatenate(C))), shape=(offset, self.n))
        A.sum_duplicates()
        return A, np.concatenate(rhs)

    def build(self) -> LinearProgram:
        c = np.zeros(self.n)
        for name, v in self.cost.items():
            c[self.blocks[name]] = v
        A_ub, b_ub = self._stack(self.ub_rows, self.ub_rhs)
        A_eq, b_eq = self._stack(self.eq_rows, self.eq_rhs)
        return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, np.concatenate(self.lower), np.concatenate(self.upper))

    def values(self, x, name: str) -> np.ndarray:
        return np.asarray(x)[self.blocks[name]]


@dataclass
class FarkasSystem:
    """``exists lam >= 0, mu free: A_ub^T lam + A_eq^T mu = d, b_ub.lam + b_eq.mu <= e``.

    ``d`` and ``e`` may be affine in external design variables ``w``:
    ``d = D w + d0`` and ``e = E w + e0``.  With ``primal_nonnegative`` the
    primal variables are sign-constrained and the equality becomes ``>=``.
    """

    A_ub: np.ndarray
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    D: np.ndarray
    d0: np.ndarray
    E: np.ndarray
    e0: float
    primal_nonnegative: bool = False

    @property
    def n_ub(self) -> int:
        return self.A_ub.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    def add_to(self, builder: LpBuilder, prefix: str, design: str | None = None):
        """Declare the multipliers in ``builder`` and emit the dual rows.

        ``design`` names the builder block holding ``w``.
        """
        lam = f"{prefix}.lam"
        mu = f"{prefix}.mu"
        builder.add_variables(lam, self.n_ub, 0.0, np.inf)
        if self.n_eq:
            builder.add_variables(mu, self.n_eq, -np.inf, np.inf)
        rows = {lam: self.A_ub.T}
        if self.n_eq:
            rows[mu] = self.A_eq.T
        if design is not None:
            rows[design] = -self.D
        if self.primal_nonnegative:
            # A^T lam - D w >= d0  <=>  -A^T lam + D w <= -d0
            builder.add_ub({k: -v for k, v in rows.items()}, -self.d0)
        else:
            builder.add_eq(rows, self.d0)
        row = {lam: self.b_ub.reshape(1, -1)}
        if self.n_eq:
            row[mu] = self.b_eq.reshape(1, -1)
        if design is not None:
            row[design] = -self.E.reshape(1, -1)
        builder.add_ub(row, [self.e0])

    def as_linear_program(self) -> tuple[LinearProgram, LpBuilder]:
        """Feasibility LP for the constant case (no design variables)."""
        if self.D.shape[1]:
            raise ValueError("system has design variables; embed it with add_to")
        b = LpBuilder()
        self.add_to(b, "farkas")
        return b.build(), b

    def is_feasible(self, **solve_options) -> bool:
        lp, _ = self.as_linear_program()
        return solve(lp, **solve_options).optimal


def forall_implies_dual(A_ub, b_ub, d, e, A_eq=None, b_eq=None, primal_nonnegative: bool = False) -> FarkasSystem:
    """Dualize ``forall z: A_ub z <= b_ub, A_eq z = b_eq  =>  d.z <= e``.

    ``d`` is a vector or a pair ``(D, d0)`` and ``e`` a scalar or a pair
    ``(E, e0)`` for conditions affine in design variables.  Valid whenever the
    primal polytope is non-empty.
    """
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.asarray(b_ub, dtype=float).ravel()
    nz = A_ub.shape[1]
    if A_eq is None:
        A_eq = np.zeros((0, nz))
        b_eq = np.zeros(0)
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, nz)
    b_eq = np.asarray(b_eq, dtype=float).ravel()
    if isinstance(d, tuple):
        D, d0 = np.atleast_2d(np.asarray(d[0], dtype=float)), np.asarray(d[1], dtype=float).ravel()
    else:
        d0 = np.asarray(d, dtype=float).ravel()
        D = np.zeros((nz, 0))
    if isinstance(e, tuple):
        E, e0 = np.asarray(e[0], dtype=float).ravel(), float(e[1])
    else:
        E, e0 = np.zeros(D.shape[1]), float(e)
    if d0.size != nz or D.shape[0] != nz or E.size != D.shape[1]:
        raise ValueError("inconsistent dimensions in the implied inequality")
    return FarkasSystem(A_ub, b_ub, A_eq, b_eq, D, d0, E, e0, primal_nonnegative)


def primal_max(A_ub, b_ub, d, A_eq=None, b_eq=None, method: str = "simplex") -> LpSolution:
    """``max d.z`` over ``{A_ub z <= b_ub, A_eq z = b_eq}`` with free ``z``."""
    d = np.asarray(d, dtype=float)
    n = d.size
    lp = LinearProgram(-d, A_ub, b_ub, A_eq, b_eq, np.full(n, -np.inf), np.full(n, np.inf))
    sol = solve(lp, method=method)
    if sol.optimal:
        sol.value = -sol.value
    return sol
