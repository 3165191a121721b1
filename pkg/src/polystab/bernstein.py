"""Bernstein forms on the unit box and the linear relaxation they induce.

For ``p_U(y) = sum_J p_J y^J`` on ``[0, 1]^n`` and a degree ``delta >= deg p_U``
the Bernstein coefficients are

    b_I = sum_{J <= I} C(I, J) / C(delta, J) * p_J,

computed here axis by axis.  Relaxing ``z_I = B_I(y)`` to the polytope
``{0 <= z_I <= B_I(I / delta), sum z_I = 1}`` turns ``min_y p_U`` into an LP
whose value lower-bounds the true minimum.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Sequence

import numpy as np

from .linprog import LinearProgram, solve
from .poly import Box, MultiIndex, Polynomial, index_grid, map_to_unit_box


@lru_cache(maxsize=None)
def _axis_matrix(d: int) -> np.ndarray:
    # T[i, j] = C(i, j) / C(d, j) for j <= i
    T = np.zeros((d + 1, d + 1))
    for i in range(d + 1):
        for j in range(i + 1):
            T[i, j] = comb(i, j) / comb(d, j)
    T.setflags(write=False)
    return T


@lru_cache(maxsize=None)
def _axis_bounds(d: int) -> np.ndarray:
    out = np.empty(d + 1)
    for i in range(d + 1):
        # 0**0 == 1 in Python, which is the required convention at the vertices
        t = i / d if d else 0.0
        out[i] = comb(d, i) * t ** i * (1.0 - t) ** (d - i)
    out.setflags(write=False)
    return out


def _check_delta(delta: Sequence[int], dim: int) -> MultiIndex:
    delta = tuple(int(d) for d in delta)
    if len(delta) != dim:
        raise ValueError(f"degree {delta} does not have length {dim}")
    if any(d < 0 for d in delta):
        raise ValueError(f"negative degree in {delta}")
    return delta


def monomial_array(p: Polynomial, delta: MultiIndex) -> np.ndarray:
    """Dense coefficient tensor of shape ``delta + 1``."""
    deg = p.degree()
    if any(a > d for a, d in zip(deg, delta)):
        raise ValueError(f"degree {delta} is below the polynomial degree {deg}")
    arr = np.zeros(tuple(d + 1 for d in delta))
    for alpha, c in p.items():
        arr[alpha] = c
    return arr


def bernstein_tensor(p_unit: Polynomial, delta: Sequence[int]) -> np.ndarray:
    """Bernstein coefficients of ``p_unit`` as a dense tensor indexed by ``I``."""
    delta = _check_delta(delta, p_unit.dim)
    arr = monomial_array(p_unit, delta)
    for k, d in enumerate(delta):
        arr = np.moveaxis(np.tensordot(_axis_matrix(d), arr, axes=([1], [k])), 0, k)
    return arr


@dataclass(frozen=True)
class BernsteinForm:
    degree: MultiIndex
    coeffs: np.ndarray  # tensor of shape degree + 1

    @property
    def dim(self) -> int:
        return len(self.degree)

    def __getitem__(self, I) -> float:
        return float(self.coeffs[tuple(I)])

    def indices(self) -> list[MultiIndex]:
        return index_grid(self.degree)

    def vector(self) -> np.ndarray:
        """Coefficients flattened in graded-lex order of ``I``."""
        return flatten(self.coeffs, self.degree)

    def evaluate(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(np.sum(self.coeffs * basis_tensor(self.degree, y)))

    def enclosure(self) -> tuple[float, float]:
        return float(self.coeffs.min()), float(self.coeffs.max())


def bernstein_coefficients(p_unit: Polynomial, delta: Sequence[int] | None = None) -> BernsteinForm:
    """Bernstein form of a polynomial already expressed on the unit box."""
    if delta is None:
        delta = p_unit.degree()
    delta = _check_delta(delta, p_unit.dim)
    return BernsteinForm(delta, bernstein_tensor(p_unit, delta))


@lru_cache(maxsize=None)
def _grlex_order(delta: MultiIndex) -> np.ndarray:
    shape = tuple(d + 1 for d in delta)
    return np.array([np.ravel_multi_index(I, shape) for I in index_grid(delta)], dtype=np.intp)


def flatten(tensor: np.ndarray, delta: MultiIndex) -> np.ndarray:
    """Flatten a tensor indexed by ``I <= delta`` in graded-lex order."""
    return np.asarray(tensor).reshape(-1)[_grlex_order(tuple(delta))]


def basis_tensor(delta: MultiIndex, y) -> np.ndarray:
    """All basis values ``B_{I,delta}(y)`` as a tensor."""
    out = np.ones(())
    for d, t in zip(delta, y):
        i = np.arange(d + 1)
        vals = np.array([comb(d, k) for k in i], dtype=float) * t ** i * (1.0 - t) ** (d - i)
        out = np.multiply.outer(out, vals)
    return out


def node_bound(I: Sequence[int], delta: Sequence[int]) -> float:
    """Peak value ``B_{I,delta}(I / delta)`` of a basis polynomial."""
    I = tuple(int(i) for i in I)
    delta = tuple(int(d) for d in delta)
    if len(I) != len(delta) or any(i < 0 or i > d for i, d in zip(I, delta)):
        raise IndexError(f"index {I} is not within degree {delta}")
    out = 1.0
    for i, d in zip(I, delta):
        out *= _axis_bounds(d)[i]
    return out


def bound_vector(delta: MultiIndex) -> np.ndarray:
    """``node_bound`` for every ``I <= delta`` in graded-lex order."""
    t = np.ones(())
    for d in delta:
        t = np.multiply.outer(t, _axis_bounds(d))
    return flatten(t, delta)


@dataclass(frozen=True)
class RelaxationLp:
    degree: MultiIndex
    indices: list[MultiIndex]
    objective: np.ndarray
    upper: np.ndarray

    def to_linear_program(self) -> LinearProgram:
        n = len(self.indices)
        return LinearProgram(
            objective=self.objective,
            A_eq=np.ones((1, n)),
            b_eq=np.ones(1),
            lower=np.zeros(n),
            upper=self.upper,
        )


def build_relaxation(bf: BernsteinForm) -> RelaxationLp:
    return RelaxationLp(bf.degree, bf.indices(), bf.vector(), bound_vector(bf.degree))


def relaxation_minimum(objective: np.ndarray, upper: np.ndarray) -> float:
    """Closed-form optimum of ``min b.z`` over the relaxation polytope.

    The polytope is a capacitated simplex, so the greedy fill of the cheapest
    coordinates is optimal.  Used as an independent check on the LP path.
    """
    order = np.argsort(objective, kind="stable")
    remaining = 1.0
    value = 0.0
    for k in order:
        take = min(upper[k], remaining)
        value += take * objective[k]
        remaining -= take
        if remaining <= 0.0:
            break
    return float(value)


def auto_degree(p: Polynomial, box: Box) -> MultiIndex:
    return map_to_unit_box(p, box).degree()


def pop_lower_bound(p: Polynomial, box: Box, delta: Sequence[int] | None = None, **solve_options) -> float:
    """LP lower bound on ``min_{x in box} p(x)``."""
    p_unit = map_to_unit_box(p, box)
    bf = bernstein_coefficients(p_unit, delta if delta is not None else p_unit.degree())
    sol = solve(build_relaxation(bf).to_linear_program(), **solve_options)
    if not sol.optimal:
        raise RuntimeError(f"relaxation LP did not solve: {sol.status.value}")
    return sol.value
