"""Joint synthesis of static output-feedback gains and polynomial Lyapunov functions.

The closed loop is ``x' = f(x) + G(x) theta`` with ``G = g * H(h(x))``; the
Lyapunov candidate is ``V_c(x) = sum_i c_i x^{m_i}``.  Every polynomial
condition on a box is replaced by its Bernstein relaxation and dualized, so
each half-step of the alternating scheme is one LP:

* step C: fix ``theta``, minimize the slack ``t`` over ``c``
  (positivity hard, Lie derivative ``<= t``);
* step K: fix ``c``, minimize ``t`` over ``theta``
  (input admissibility hard, Lie derivative and facet blocking ``<= t``).
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bernstein import bernstein_tensor, bound_vector, flatten
from .linprog import LpBuilder, LpStatus, forall_implies_dual, solve
from .poly import (
    Box,
    MultiIndex,
    PolyMatrix,
    Polynomial,
    evaluate,
    index_grid,
    lie_matrix,
    linear_combination,
    map_to_unit_box,
    squared_norm,
)

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    """Raised when a step cannot be carried out at all."""


class TemplateTooWeak(SynthesisError):
    pass


class LpFailure(SynthesisError):
    pass


class Status(enum.Enum):
    STABILIZED = "Stabilized"
    STABILIZED_NO_INVARIANCE = "StabilizedNoInvariance"
    FAILED_PROGRESS = "FailedProgress"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class SynthesisOptions:
    epsilon: float = 0.01
    c_bounds: tuple[float, float] = (-5.0, 5.0)
    theta_bounds: tuple[float, float] = (-5.0, 5.0)
    # per-coefficient overrides, index -> bound
    c_lower: dict = field(default_factory=dict)
    c_upper: dict = field(default_factory=dict)
    tol: float = 1e-6
    max_iter: int = 20
    progress_tol: float | None = 1e-9
    hybrid: bool = False
    # certify positivity and decrease on the zero decomposition of R with one gain vector
    split: bool = False
    drop_invariance: bool = False
    invariance_fallback: bool = True
    facet_margin: float = 0.0
    degree_elevate: int = 0
    per_row_derivative: bool = False
    lp_method: str = "highs"

    def with_overrides(self, **kw) -> "SynthesisOptions":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class SynthesisProblem:
    variables: tuple[str, ...]
    f: tuple[Polynomial, ...]
    g: PolyMatrix
    h: tuple[Polynomial, ...]
    H: PolyMatrix
    region: Box
    inputs: tuple[tuple[tuple[float, ...], float], ...]
    template: tuple[MultiIndex, ...]
    options: SynthesisOptions = SynthesisOptions()
    outputs: tuple[str, ...] = ()
    # optional per-box drift for the hybrid mode, ordered like zero_split(region)
    box_dynamics: tuple[tuple[Polynomial, ...], ...] | None = None

    def __post_init__(self):
        n = len(self.variables)
        if len(self.f) != n or any(p.dim != n for p in self.f):
            raise ValueError("dynamics must have one polynomial per state variable")
        if self.g.shape[0] != n or self.g.dim != n:
            raise ValueError(f"control matrix must have {n} rows over the state")
        if any(p.dim != n for p in self.h):
            raise ValueError("outputs must be polynomials in the state")
        if self.H.dim != len(self.h):
            raise ValueError(f"structure matrix is over {self.H.dim} outputs, {len(self.h)} given")
        if self.H.shape[0] != self.g.shape[1]:
            raise ValueError(f"structure matrix has {self.H.shape[0]} rows, control matrix {self.g.shape[1]} columns")
        if self.region.dim != n:
            raise ValueError("region dimension does not match the state")
        for alpha, _ in self.inputs:
            if len(alpha) != self.g.shape[1]:
                raise ValueError("input halfspace normal has the wrong length")
        if not self.template:
            raise ValueError("empty Lyapunov template")
        for m in self.template:
            if len(m) != n:
                raise ValueError(f"template monomial {m} has the wrong length")
            if sum(m) == 0:
                raise ValueError("template must not contain the constant monomial")
        if len(set(self.template)) != len(self.template):
            raise ValueError("template has repeated monomials")
        if not self.region.contains(np.zeros(n)):
            raise ValueError("the origin must lie in the region")
        zero = np.zeros(n)
        if any(abs(evaluate(p, zero)) > 0.0 for p in self.f):
            raise ValueError("origin is not an equilibrium: f(0) != 0")
        G0 = effective_structure(self).G.evaluate(zero)
        if np.any(G0 != 0.0):
            raise ValueError("origin is not an equilibrium for every gain: G(0) != 0")
        if self.box_dynamics is not None:
            for fi in self.box_dynamics:
                if len(fi) != n or any(abs(evaluate(p, zero)) > 0.0 for p in fi):
                    raise ValueError("per-box dynamics must vanish at the origin")

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def n_inputs(self) -> int:
        return self.g.shape[1]

    @property
    def n_gains(self) -> int:
        return self.H.shape[1]

    def with_options(self, **kw) -> "SynthesisProblem":
        return replace(self, options=self.options.with_overrides(**kw))

    def lyapunov(self, c) -> Polynomial:
        return linear_combination(c, [Polynomial.monomial(m) for m in self.template], self.n)

    def coefficient_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        m = len(self.template)
        lo = np.full(m, float(self.options.c_bounds[0]))
        hi = np.full(m, float(self.options.c_bounds[1]))
        for i, v in self.options.c_lower.items():
            lo[int(i)] = float(v)
        for i, v in self.options.c_upper.items():
            hi[int(i)] = float(v)
        return lo, hi


@dataclass(frozen=True)
class EffectiveStructure:
    script_H: PolyMatrix
    G: PolyMatrix


def effective_structure(problem: SynthesisProblem) -> EffectiveStructure:
    """``H(h(x))`` by composition and ``G = g H(h(x))``."""
    if problem.H.dim != len(problem.h):
        raise ValueError("structure matrix and outputs disagree in size")
    script_H = problem.H.compose(list(problem.h))
    return EffectiveStructure(script_H, problem.g @ script_H)


def zero_split(box: Box) -> list[Box]:
    """Split ``box`` at 0 along every axis that straddles it.

    Ordering: the first axis varies slowest, lower halves first.
    """
    if not box.contains(np.zeros(box.dim)):
        raise ValueError("the origin is not in the box")
    pieces = [((), ())]
    for a, b in zip(box.lower, box.upper):
        parts = [(a, 0.0), (0.0, b)] if a < 0.0 < b else [(a, b)]
        pieces = [(lo + (pa,), hi + (pb,)) for lo, hi in pieces for pa, pb in parts]
    return [Box(lo, hi) for lo, hi in pieces]


# Bernstein data per box ----------------------------------------------------


def _max_degree(polys, dim, floor=0) -> MultiIndex:
    deg = [floor] * dim
    for p in polys:
        deg = [max(d, a) for d, a in zip(deg, p.degree())]
    return tuple(deg)


def _bern_vector(p: Polynomial, box: Box, delta: MultiIndex) -> np.ndarray:
    return flatten(bernstein_tensor(map_to_unit_box(p, box), delta), delta)


class BoxData:
    """Bernstein vectors of everything the constraint builders need on one box."""

    def __init__(self, problem: SynthesisProblem, box: Box, f=None, eff: EffectiveStructure | None = None):
        self.problem = problem
        self.box = box
        n = problem.n
        elev = problem.options.degree_elevate
        self.f = tuple(f) if f is not None else problem.f
        self.eff = eff or effective_structure(problem)
        G = self.eff.G
        norm = squared_norm(n)
        monos = [Polynomial.monomial(m) for m in problem.template]

        def remapped_degree(polys, floor=0):
            return _max_degree([map_to_unit_box(p, box) for p in polys], n, floor)

        def elevate(delta):
            return tuple(d + elev for d in delta)

        self.pos_delta = elevate(remapped_degree(monos, 2))
        self.pos_monos = np.array([_bern_vector(m, box, self.pos_delta) for m in monos])
        self.pos_norm = _bern_vector(norm, box, self.pos_delta)
        self.pos_upper = bound_vector(self.pos_delta)

        B = lie_matrix(problem.template, self.f, G)
        self.lie = B
        self.der_delta = elevate(remapped_degree([e for r in B.entries for e in r], 2))
        q = G.shape[1]
        self.der_B = np.array(
            [[_bern_vector(B[i, j], box, self.der_delta) for j in range(q + 1)] for i in range(len(monos))]
        )  # (m, 1+q, N)
        self.der_norm = _bern_vector(norm, box, self.der_delta)
        self.der_upper = bound_vector(self.der_delta)

        sH = self.eff.script_H
        self.in_delta = remapped_degree([e for r in sH.entries for e in r])
        self.in_H = np.array(
            [[_bern_vector(sH[i, j], box, self.in_delta) for j in range(sH.shape[1])] for i in range(sH.shape[0])]
        )  # (p, q, N)

        self.inv_delta = elevate(remapped_degree(list(self.f) + [e for r in G.entries for e in r]))
        self.inv_f = np.array([_bern_vector(fk, box, self.inv_delta) for fk in self.f])  # (n, N)
        self.inv_G = np.array(
            [[_bern_vector(G[k, j], box, self.inv_delta) for j in range(q)] for k in range(n)]
        )  # (n, q, N)
        self.inv_indices = index_grid(self.inv_delta)


# Constraint builders --------------------------------------------------------


def _relaxation_system(D, d0, E, e0, upper):
    """Farkas system of ``forall z in relaxation: (D w + d0).z <= E w + e0``."""
    N = upper.size
    return forall_implies_dual(
        np.eye(N), upper, (D, d0), (E, e0), A_eq=np.ones((1, N)), b_eq=[1.0], primal_nonnegative=True
    )


def positivity_constraints(builder: LpBuilder, data: BoxData, epsilon: float, tag: str = "pos"):
    """``V_c - eps |x|^2 >= 0`` on the box, as dual rows over block ``c``."""
    D = -data.pos_monos.T  # (N, m)
    d0 = epsilon * data.pos_norm
    sys = _relaxation_system(D, d0, np.zeros(D.shape[1]), 0.0, data.pos_upper)
    sys.add_to(builder, tag, design="c")
    return sys


def _lie_bernstein_fixed_theta(data: BoxData, theta) -> np.ndarray:
    theta_t = np.concatenate([[1.0], np.asarray(theta, dtype=float)])
    return np.einsum("ijn,j->in", data.der_B, theta_t)  # (m, N)


def derivative_constraints(builder: LpBuilder, data: BoxData, epsilon: float, *, theta=None, c=None,
                           theta_block: str = "theta", tag: str = "der", per_row: bool = False):
    """``grad V_c . (f + G theta) + eps |x|^2 <= t`` on the box, one side fixed.

    With ``theta`` given the rows are over block ``c``; with ``c`` given they
    are over ``theta_block``.  Both cases also involve block ``t``.
    """
    if (theta is None) == (c is None):
        raise ValueError("fix exactly one of theta and c")
    upper = data.der_upper
    m = data.der_B.shape[0]
    systems = []
    if theta is not None:
        rows = _lie_bernstein_fixed_theta(data, theta)  # (m, N)
        if per_row:
            for i in range(m):
                D = np.zeros((upper.size, m))
                D[:, i] = rows[i]
                D_full = np.hstack([D, np.zeros((upper.size, 1))])
                E = np.zeros(m + 1)
                E[-1] = 1.0 / m
                sys = _relaxation_system(D_full, epsilon / m * data.der_norm, E, 0.0, upper)
                systems.append(sys)
        else:
            D_full = np.hstack([rows.T, np.zeros((upper.size, 1))])
            E = np.zeros(m + 1)
            E[-1] = 1.0
            systems.append(_relaxation_system(D_full, epsilon * data.der_norm, E, 0.0, upper))
        design = ("c", "t")
    else:
        c = np.asarray(c, dtype=float)
        q = data.der_B.shape[1] - 1
        if per_row:
            for i in range(m):
                D_full = np.hstack([c[i] * data.der_B[i, 1:].T, np.zeros((upper.size, 1))])
                E = np.zeros(q + 1)
                E[-1] = 1.0 / m
                d0 = c[i] * data.der_B[i, 0] + epsilon / m * data.der_norm
                systems.append(_relaxation_system(D_full, d0, E, 0.0, upper))
        else:
            drift = np.einsum("i,in->n", c, data.der_B[:, 0])
            gains = np.einsum("i,ijn->nj", c, data.der_B[:, 1:])  # (N, q)
            D_full = np.hstack([gains, np.zeros((upper.size, 1))])
            E = np.zeros(q + 1)
            E[-1] = 1.0
            systems.append(_relaxation_system(D_full, drift + epsilon * data.der_norm, E, 0.0, upper))
        design = (theta_block, "t")
    for k, sys in enumerate(systems):
        _add_split_design(builder, sys, f"{tag}.{k}", design)
    return systems


def _add_split_design(builder: LpBuilder, sys, prefix: str, design: tuple[str, str]):
    """Embed a Farkas system whose design vector is ``[block, t]``."""
    first, second = design
    n1 = builder.blocks[first].stop - builder.blocks[first].start
    lam, mu = f"{prefix}.lam", f"{prefix}.mu"
    builder.add_variables(lam, sys.n_ub, 0.0, np.inf)
    builder.add_variables(mu, sys.n_eq, -np.inf, np.inf)
    D1, D2 = sys.D[:, :n1], sys.D[:, n1:]
    E1, E2 = sys.E[:n1], sys.E[n1:]
    # A^T lam - D w >= d0
    builder.add_ub({lam: -sys.A_ub.T, mu: -sys.A_eq.T, first: D1, second: D2}, -sys.d0)
    builder.add_ub(
        {lam: sys.b_ub.reshape(1, -1), mu: sys.b_eq.reshape(1, -1), first: -E1.reshape(1, -1),
         second: -E2.reshape(1, -1)},
        [sys.e0],
    )


def input_constraints(builder: LpBuilder, data: BoxData, inputs, theta_block: str = "theta"):
    """``alpha_k . H_I theta <= beta_k`` for every Bernstein index ``I``."""
    if not inputs:
        return 0
    N = data.in_H.shape[2]
    rows, rhs = [], []
    for alpha, beta in inputs:
        M = np.einsum("p,pqn->nq", np.asarray(alpha, dtype=float), data.in_H)  # (N, q)
        rows.append(M)
        rhs.append(np.full(N, float(beta)))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    keep = np.any(A != 0.0, axis=1)
    if np.any(b[~keep] < 0.0):
        raise SynthesisError("input polytope excludes u = 0 at a point where u cannot vary")
    if keep.any():
        builder.add_ub({theta_block: A[keep]}, b[keep])
    return int(keep.sum())


def outer_facets(box: Box, region: Box) -> list[tuple[int, int]]:
    """Facets ``(axis, side)`` of ``box`` on the boundary of ``region``; side 0 = lower."""
    out = []
    for j in range(box.dim):
        if box.lower[j] == region.lower[j]:
            out.append((j, 0))
        if box.upper[j] == region.upper[j]:
            out.append((j, 1))
    return out


def facet_rows(data: BoxData, facets) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``(A, b)`` meaning ``outward flux coefficient = A theta + b``."""
    delta = data.inv_delta
    A_rows, b_rows = [], []
    for j, side in facets:
        target = 0 if side == 0 else delta[j]
        sign = -1.0 if side == 0 else 1.0
        for k, I in enumerate(data.inv_indices):
            if I[j] != target:
                continue
            A_rows.append(sign * data.inv_G[j, :, k])
            b_rows.append(sign * data.inv_f[j, k])
    q = data.inv_G.shape[1]
    return np.array(A_rows).reshape(-1, q), np.array(b_rows)


def invariance_constraints(builder: LpBuilder, data: BoxData, facets, margin: float = 0.0,
                           theta_block: str = "theta"):
    """Facet blocking ``n_F . (f_I + G_I theta) <= t - margin`` on the listed facets."""
    A, b = facet_rows(data, facets)
    if not len(b):
        return 0
    builder.add_ub({theta_block: A, "t": -np.ones((len(b), 1))}, -b - margin)
    return len(b)


# Policy iteration ------------------------------------------------------------


@dataclass
class StepRecord:
    kind: str
    slack: float
    seconds: float


@dataclass
class SynthesisResult:
    status: Status
    c_star: np.ndarray
    theta_star: list[np.ndarray]
    slack_trace: list[float]
    iterations: int
    boxes: list[Box]
    invariance: bool
    steps: list[StepRecord] = field(default_factory=list)
    message: str = ""

    @property
    def stabilized(self) -> bool:
        return self.status in (Status.STABILIZED, Status.STABILIZED_NO_INVARIANCE)

    @property
    def final_slack(self) -> float:
        return self.slack_trace[-1] if self.slack_trace else float("inf")

    @property
    def hybrid(self) -> bool:
        return len(self.theta_star) > 1


class _Engine:
    def __init__(self, problem: SynthesisProblem, hybrid: bool, invariance: bool):
        self.problem = problem
        self.opts = problem.options
        self.hybrid = hybrid
        self.invariance = invariance
        R = problem.region
        eff = effective_structure(problem)
        self.eff = eff
        if hybrid or self.opts.split:
            self.boxes = zero_split(R)
        else:
            self.boxes = [R]
        dyn = problem.box_dynamics
        if dyn is not None and hybrid and len(dyn) != len(self.boxes):
            raise ValueError(f"{len(dyn)} per-box dynamics for {len(self.boxes)} boxes")
        self.data = [
            BoxData(problem, box, f=dyn[i] if (dyn is not None and hybrid) else None, eff=eff)
            for i, box in enumerate(self.boxes)
        ]
        # invariance is always certified on the facets of R itself
        if hybrid:
            self.inv_data = self.data
            self.inv_facets = [outer_facets(b, R) for b in self.boxes]
        else:
            self.inv_data = [self.data[0] if len(self.boxes) == 1 else BoxData(problem, R, eff=eff)]
            self.inv_facets = [outer_facets(R, R)]
        self.c_lo, self.c_hi = problem.coefficient_bounds()

    def _solve(self, builder: LpBuilder, what: str):
        lp = builder.build()
        sol = solve(lp, method=self.opts.lp_method)
        if sol.status is LpStatus.NUMERICAL_FAILURE:
            raise LpFailure(f"{what}: LP numerical failure ({sol.message})")
        return sol

    def check_positivity(self):
        b = LpBuilder()
        b.add_variables("c", len(self.problem.template), self.c_lo, self.c_hi)
        for k, data in enumerate(self.data):
            positivity_constraints(b, data, self.opts.epsilon, tag=f"pos{k}")
        b.minimize("c", 0.0)
        sol = self._solve(b, "positivity")
        if not sol.optimal:
            raise TemplateTooWeak(
                "no coefficient vector satisfies the positivity constraints; enlarge the template or relax bounds"
            )

    def step_c(self, thetas):
        o = self.opts
        b = LpBuilder()
        b.add_variables("c", len(self.problem.template), self.c_lo, self.c_hi)
        b.add_variables("t", 1, 0.0, np.inf)
        for k, data in enumerate(self.data):
            positivity_constraints(b, data, o.epsilon, tag=f"pos{k}")
            theta = thetas[k] if self.hybrid else thetas[0]
            derivative_constraints(b, data, o.epsilon, theta=theta, tag=f"der{k}", per_row=o.per_row_derivative)
        b.minimize("t", 1.0)
        sol = self._solve(b, "Lyapunov step")
        if not sol.optimal:
            raise LpFailure(f"Lyapunov step LP is {sol.status.value}")
        return b.values(sol.x, "c").copy(), float(b.values(sol.x, "t")[0])

    def _step_k_program(self, c, box_ids, theta_block="theta"):
        o = self.opts
        b = LpBuilder()
        b.add_variables(theta_block, self.problem.n_gains, o.theta_bounds[0], o.theta_bounds[1])
        b.add_variables("t", 1, 0.0, np.inf)
        for k in box_ids:
            data = self.data[k]
            derivative_constraints(b, data, o.epsilon, c=c, tag=f"der{k}", per_row=o.per_row_derivative)
            input_constraints(b, data, self.problem.inputs)
        if self.invariance:
            inv_ids = box_ids if self.hybrid else [0]
            for k in inv_ids:
                invariance_constraints(b, self.inv_data[k], self.inv_facets[k], o.facet_margin)
        b.minimize("t", 1.0)
        return b

    def step_k(self, c):
        if self.hybrid:
            thetas, slacks = [], []
            for k in range(len(self.boxes)):
                b = self._step_k_program(c, [k])
                sol = self._solve(b, f"controller step, box {k}")
                if not sol.optimal:
                    raise LpFailure(f"controller step LP for box {k} is {sol.status.value}")
                thetas.append(b.values(sol.x, "theta").copy())
                slacks.append(float(b.values(sol.x, "t")[0]))
            return thetas, max(slacks)
        b = self._step_k_program(c, list(range(len(self.boxes))))
        sol = self._solve(b, "controller step")
        if not sol.optimal:
            raise LpFailure(f"controller step LP is {sol.status.value}")
        return [b.values(sol.x, "theta").copy()], float(b.values(sol.x, "t")[0])

    def run(self) -> SynthesisResult:
        o = self.opts
        self.check_positivity()
        n_ctrl = len(self.boxes) if self.hybrid else 1
        lo, hi = o.theta_bounds
        thetas = [np.clip(np.zeros(self.problem.n_gains), lo, hi) for _ in range(n_ctrl)]
        trace: list[float] = []
        steps: list[StepRecord] = []
        previous = None
        c = None
        status = Status.ITER_LIMIT
        it = 0
        for it in range(1, o.max_iter + 1):
            t0 = time.perf_counter()
            c, t_c = self.step_c(thetas)
            steps.append(StepRecord("lyapunov", t_c, time.perf_counter() - t0))
            trace.append(t_c)
            t0 = time.perf_counter()
            thetas, t_k = self.step_k(c)
            steps.append(StepRecord("controller", t_k, time.perf_counter() - t0))
            trace.append(t_k)
            log.info("iteration %d: t_lyapunov=%.3g t_controller=%.3g", it, t_c, t_k)
            if t_k <= o.tol:
                status = Status.STABILIZED if self.invariance else Status.STABILIZED_NO_INVARIANCE
                break
            if previous is not None and o.progress_tol is not None and previous - t_k <= o.progress_tol:
                status = Status.FAILED_PROGRESS
                break
            previous = t_k
        return SynthesisResult(
            status=status,
            c_star=c,
            theta_star=thetas,
            slack_trace=trace,
            iterations=it,
            boxes=list(self.boxes) if self.hybrid else [self.problem.region],
            invariance=self.invariance,
            steps=steps,
        )


def _run_with_fallback(problem: SynthesisProblem, hybrid: bool) -> SynthesisResult:
    o = problem.options
    if o.drop_invariance:
        return _Engine(problem, hybrid, invariance=False).run()
    result = _Engine(problem, hybrid, invariance=True).run()
    if result.status is Status.STABILIZED or not o.invariance_fallback:
        return result
    log.info("invariance run ended with %s; retrying without invariance", result.status.value)
    fallback = _Engine(problem, hybrid, invariance=False).run()
    if fallback.stabilized:
        fallback.message = f"invariance constraints dropped after {result.status.value}"
        return fallback
    return result


def policy_iteration(problem: SynthesisProblem) -> SynthesisResult:
    """Alternate Lyapunov and controller LPs for a single gain vector."""
    return _run_with_fallback(problem, hybrid=False)


def synthesize_hybrid(problem: SynthesisProblem) -> SynthesisResult:
    """One gain vector per box of the zero decomposition, one common ``V``."""
    return _run_with_fallback(problem, hybrid=True)


def synthesize(problem: SynthesisProblem) -> SynthesisResult:
    return synthesize_hybrid(problem) if problem.options.hybrid else policy_iteration(problem)
