"""Numerical checks of synthesized certificates and closed-loop simulation.

``check_certificate`` evaluates ``V``, ``V'`` and the facet fluxes on a dense
grid and, independently of the Farkas route used by synthesis, re-solves the
primal Bernstein relaxations at the fixed ``(c, theta)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bernstein import bernstein_tensor, bound_vector, flatten
from .linprog import FEASTOL, LinearProgram, solve
from .poly import Box, Polynomial, evaluate_many, map_to_unit_box, squared_norm
from .synthesis import BoxData, SynthesisProblem, effective_structure, outer_facets, zero_split


def default_resolution(n: int) -> int:
    return 41 if n <= 3 else 11


@dataclass
class FacetCheck:
    axis: int  # 0-based
    side: int  # 0 = lower facet, 1 = upper facet
    max_flux: float

    @property
    def label(self) -> str:
        return f"x{self.axis + 1}{'-' if self.side == 0 else '+'}"


@dataclass
class VerificationReport:
    grid_resolution: int
    exclusion_radius: float
    # min over the grid of V - eps' |x|^2
    lyapunov_min_margin: float
    # min of V over grid points other than the origin; > 0 means V vanishes only there
    lyapunov_min_off_origin: float
    derivative_max: float
    # max of V' over grid points with |x| > exclusion_radius
    derivative_max_off_origin: float
    per_box_derivative_max: list[float]
    facets: list[FacetCheck]
    certificate_ok: bool
    certificate_details: dict = field(default_factory=dict)
    derivative_tol: float = 1e-6

    @property
    def facet_max_flux(self) -> dict[str, float]:
        return {f.label: f.max_flux for f in self.facets}

    @property
    def lyapunov_ok(self) -> bool:
        return self.lyapunov_min_margin >= -self.derivative_tol and self.lyapunov_min_off_origin > 0.0

    @property
    def derivative_ok(self) -> bool:
        return self.derivative_max <= self.derivative_tol

    @property
    def derivative_strict(self) -> bool:
        """``V' < 0`` at every grid point off the excluded ball."""
        return self.derivative_max_off_origin < 0.0

    @property
    def facets_blocked(self) -> bool:
        return all(f.max_flux < 0.0 for f in self.facets)

    def facets_nonpositive(self, tol: float = 1e-6) -> bool:
        return all(f.max_flux <= tol for f in self.facets)

    @property
    def passed(self) -> bool:
        return self.lyapunov_ok and self.derivative_ok

    def summary(self) -> dict:
        return {
            "grid_resolution": self.grid_resolution,
            "exclusion_radius": self.exclusion_radius,
            "lyapunov_min_margin": self.lyapunov_min_margin,
            "lyapunov_min_off_origin": self.lyapunov_min_off_origin,
            "lyapunov_ok": self.lyapunov_ok,
            "derivative_max": self.derivative_max,
            "derivative_max_off_origin": self.derivative_max_off_origin,
            "per_box_derivative_max": list(self.per_box_derivative_max),
            "derivative_ok": self.derivative_ok,
            "derivative_strict": self.derivative_strict,
            "facet_max_flux": self.facet_max_flux,
            "facets_blocked": self.facets_blocked,
            "certificate_ok": self.certificate_ok,
            "certificate_details": dict(self.certificate_details),
        }


# Closed loop -------------------------------------------------------------------


def _as_thetas(problem: SynthesisProblem, theta) -> list[np.ndarray]:
    if isinstance(theta, np.ndarray) and theta.ndim == 1:
        thetas = [theta]
    elif isinstance(theta, (list, tuple)) and theta and np.ndim(theta[0]) == 1:
        thetas = [np.asarray(t, dtype=float) for t in theta]
    else:
        thetas = [np.asarray(theta, dtype=float).reshape(-1)]
    for t in thetas:
        if t.shape != (problem.n_gains,):
            raise ValueError(f"gain vector has {t.size} entries, expected {problem.n_gains}")
    if len(thetas) > 1 and len(thetas) != len(zero_split(problem.region)):
        raise ValueError(f"{len(thetas)} gain vectors but the zero split has {len(zero_split(problem.region))} boxes")
    return thetas


class ClosedLoop:
    """``x' = f_i(x) + G(x) theta_i`` with ``i`` chosen by box membership."""

    def __init__(self, problem: SynthesisProblem, theta):
        self.problem = problem
        self.thetas = _as_thetas(problem, theta)
        eff = effective_structure(problem)
        self.script_H = eff.script_H
        self.G = eff.G
        self.boxes = zero_split(problem.region) if len(self.thetas) > 1 else [problem.region]
        n = problem.n
        fields, inputs = [], []
        for i, th in enumerate(self.thetas):
            f = problem.f
            if problem.box_dynamics is not None and len(self.thetas) > 1:
                f = problem.box_dynamics[i]
            fields.append(tuple(
                f[k] + sum((self.G[k, j] * float(th[j]) for j in range(len(th))), Polynomial.zero(n))
                for k in range(n)
            ))
            inputs.append(tuple(
                sum((self.script_H[r, j] * float(th[j]) for j in range(len(th))), Polynomial.zero(n))
                for r in range(self.script_H.shape[0])
            ))
        self.fields = fields
        self.inputs = inputs

    def box_index(self, x) -> int:
        if len(self.boxes) == 1:
            return 0
        # points outside R are assigned by their projection onto R
        lo = np.asarray(self.problem.region.lower)
        hi = np.asarray(self.problem.region.upper)
        xc = np.clip(x, lo, hi)
        for i, b in enumerate(self.boxes):
            if b.contains(xc):
                return i
        return len(self.boxes) - 1

    def field_at(self, x, box: int | None = None) -> np.ndarray:
        i = self.box_index(x) if box is None else box
        return np.array([evaluate_many(p, x[None, :])[0] for p in self.fields[i]])

    def input_at(self, x, box: int | None = None) -> np.ndarray:
        i = self.box_index(x) if box is None else box
        return np.array([evaluate_many(p, x[None, :])[0] for p in self.inputs[i]])

    def field_many(self, X, box: int) -> np.ndarray:
        return np.stack([evaluate_many(p, X) for p in self.fields[box]], axis=1)

    def input_many(self, X, box: int) -> np.ndarray:
        return np.stack([evaluate_many(p, X) for p in self.inputs[box]], axis=1)


# Grid verification ---------------------------------------------------------


def _relaxation_extreme(p: Polynomial, box: Box, maximize: bool, floor: Sequence[int] = (),
                        lp_method: str = "simplex") -> float:
    """Min (or max) of the Bernstein relaxation of ``p`` on ``box``.

    The degree is at least ``floor`` componentwise, so a check can use the
    same degree as the synthesis LPs.
    """
    p_unit = map_to_unit_box(p, box)
    floor = tuple(floor) or (2,) * p.dim
    delta = tuple(max(d, f) for d, f in zip(p_unit.degree(), floor))
    b = flatten(bernstein_tensor(p_unit, delta), delta)
    u = bound_vector(delta)
    sign = -1.0 if maximize else 1.0
    lp = LinearProgram(objective=sign * b, A_eq=np.ones((1, b.size)), b_eq=np.ones(1),
                       lower=np.zeros(b.size), upper=u)
    sol = solve(lp, method=lp_method)
    if not sol.optimal:
        return np.inf if maximize else -np.inf
    return sign * sol.value


def lyapunov_polynomial(problem: SynthesisProblem, c) -> Polynomial:
    if isinstance(c, Polynomial):
        return c
    return problem.lyapunov(np.asarray(c, dtype=float))


def coefficients_for(problem: SynthesisProblem, V: Polynomial) -> np.ndarray:
    """Coefficient vector of ``V`` over the problem template."""
    extra = [a for a in V.terms if a not in problem.template]
    if extra:
        raise ValueError(f"monomials {extra} of V are not in the template")
    return np.array([V.coefficient(m) for m in problem.template])


def check_certificate(problem: SynthesisProblem, c, theta, *, grid: int | None = None,
                      exclusion_radius: float = 0.0, epsilon_prime: float = 0.0,
                      derivative_tol: float = 1e-6, relaxation: bool = True) -> VerificationReport:
    """Grid and LP checks of ``(V_c, theta)`` on the region of ``problem``.

    ``c`` is a coefficient vector over the template or a ``Polynomial``;
    ``theta`` is one gain vector or one per box of the zero split.
    """
    n = problem.n
    V = lyapunov_polynomial(problem, c)
    loop = ClosedLoop(problem, theta)
    R = problem.region
    res = grid or default_resolution(n)
    X = R.grid(res)
    r = np.linalg.norm(X, axis=1)

    Vx = evaluate_many(V, X)
    margin = Vx - epsilon_prime * r ** 2
    off = r > 0.0
    grad = [V.derivative(k) for k in range(n)]
    G = np.stack([evaluate_many(g, X) for g in grad], axis=1)

    dV = np.full(X.shape[0], -np.inf)
    per_box = []
    for i, box in enumerate(loop.boxes):
        inside = np.all((X >= np.asarray(box.lower)) & (X <= np.asarray(box.upper)), axis=1)
        F = loop.field_many(X[inside], i)
        d = np.einsum("ij,ij->i", G[inside], F)
        per_box.append(float(d.max()) if d.size else -np.inf)
        dV[inside] = np.maximum(dV[inside], d)
    far = r > exclusion_radius

    facets = []
    for j in range(n):
        for side in (0, 1):
            w = R.lower[j] if side == 0 else R.upper[j]
            sign = -1.0 if side == 0 else 1.0
            on = X[:, j] == w
            worst = -np.inf
            for i, box in enumerate(loop.boxes):
                if (j, side) not in outer_facets(box, R):
                    continue
                pts = X[on & np.all((X >= np.asarray(box.lower)) & (X <= np.asarray(box.upper)), axis=1)]
                if len(pts):
                    worst = max(worst, float((sign * loop.field_many(pts, i)[:, j]).max()))
            facets.append(FacetCheck(j, side, worst))

    details: dict = {}
    ok = True
    if relaxation:
        details, ok = _relaxation_checks(problem, V, loop, derivative_tol)

    return VerificationReport(
        grid_resolution=res,
        exclusion_radius=exclusion_radius,
        lyapunov_min_margin=float(margin.min()),
        lyapunov_min_off_origin=float(Vx[off].min()) if off.any() else np.inf,
        derivative_max=float(dV.max()),
        derivative_max_off_origin=float(dV[far].max()) if far.any() else -np.inf,
        per_box_derivative_max=per_box,
        facets=facets,
        certificate_ok=ok,
        certificate_details=details,
        derivative_tol=derivative_tol,
    )


def _relaxation_checks(problem: SynthesisProblem, V: Polynomial, loop: ClosedLoop, derivative_tol: float):
    """Primal relaxation LPs at fixed ``(V, theta)`` on the certified boxes."""
    o = problem.options
    n = problem.n
    eps = o.epsilon
    norm = squared_norm(n)
    hybrid = len(loop.boxes) > 1
    boxes = zero_split(problem.region) if (hybrid or o.split) else [problem.region]
    pos_min, der_max, in_max = np.inf, -np.inf, -np.inf
    for b_idx, box in enumerate(boxes):
        i = b_idx if hybrid else 0
        f = problem.box_dynamics[i] if (hybrid and problem.box_dynamics is not None) else None
        data = BoxData(problem, box, f=f)
        pos_min = min(pos_min, _relaxation_extreme(V - norm * eps, box, maximize=False, floor=data.pos_delta))
        F = loop.fields[i]
        dV = sum((V.derivative(k) * F[k] for k in range(n)), Polynomial.zero(n))
        der_max = max(der_max, _relaxation_extreme(dV + norm * eps, box, maximize=True, floor=data.der_delta))
        for alpha, beta in problem.inputs:
            u = sum((loop.inputs[i][r] * float(a) for r, a in enumerate(alpha)), Polynomial.zero(n))
            if u.is_zero():
                val = -float(beta)
            else:
                p_unit = map_to_unit_box(u, box)
                val = float(bernstein_tensor(p_unit, p_unit.degree()).max()) - float(beta)
            in_max = max(in_max, val)
    details = {
        "positivity_min": float(pos_min),
        "derivative_max": float(der_max),
        "input_violation": float(in_max) if problem.inputs else 0.0,
    }
    ok = pos_min >= -FEASTOL and der_max <= derivative_tol + FEASTOL and details["input_violation"] <= FEASTOL
    return details, bool(ok)


# Simulation ----------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N, n)
    inputs: np.ndarray  # (N, p)
    box_exit_time: float | None = None
    aborted: bool = False

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def rk4_step(fn, x, dt):
    k1 = fn(x)
    k2 = fn(x + 0.5 * dt * k1)
    k3 = fn(x + 0.5 * dt * k2)
    k4 = fn(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(problem: SynthesisProblem, theta, x0, dt: float = 1e-2, horizon: float = 20.0,
             open_loop: bool = False) -> Trajectory:
    """Fixed-step RK4 integration of the closed loop from ``x0``."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (problem.n,):
        raise ValueError(f"initial state has {x.size} entries, expected {problem.n}")
    if not problem.region.contains(x):
        raise ValueError("initial state is outside the region")
    if open_loop:
        theta = np.zeros(problem.n_gains)
    loop = ClosedLoop(problem, theta)
    steps = int(round(horizon / dt))
    times = [0.0]
    states = [x.copy()]
    inputs = [loop.input_at(x)]
    exit_time = None
    aborted = False
    for k in range(1, steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            x = rk4_step(loop.field_at, x, dt)
        if not np.all(np.isfinite(x)):
            aborted = True
            break
        t = k * dt
        times.append(t)
        states.append(x.copy())
        inputs.append(loop.input_at(x))
        if exit_time is None and not problem.region.contains(x):
            exit_time = t
    return Trajectory(np.array(times), np.array(states), np.array(inputs), exit_time, aborted)


def export_field_grid(problem: SynthesisProblem, theta, resolution: int):
    """Rows ``x.., dx.., u..`` over a ``resolution``-per-axis grid of the region."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    loop = ClosedLoop(problem, theta)
    X = problem.region.grid(resolution)
    rows = []
    for x in X:
        i = loop.box_index(x)
        rows.append(np.concatenate([x, loop.field_at(x, i), loop.input_at(x, i)]))
    return np.array(rows)


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path_or_file, n: int | None = None):
    n = traj.states.shape[1] if n is None else n
    p = traj.inputs.shape[1]
    header = ["t"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(p)]
    _write_csv(path_or_file, header,
               (np.concatenate([[t], x, u]) for t, x, u in zip(traj.times, traj.states, traj.inputs)))


def write_field_csv(rows: np.ndarray, n: int, path_or_file):
    p = rows.shape[1] - 2 * n
    header = [f"x{k + 1}" for k in range(n)] + [f"dx{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(p)]
    _write_csv(path_or_file, header, rows)


def _write_csv(path_or_file, header: Sequence[str], rows):
    if hasattr(path_or_file, "write"):
        _emit(path_or_file, header, rows)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _emit(fh, header, rows)


def _emit(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_g17(v) for v in row])
