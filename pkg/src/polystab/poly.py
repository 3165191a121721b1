"""Sparse multivariate polynomials over float coefficients.

A polynomial in ``n`` variables is stored as a map from exponent tuples
(multi-indices) to non-zero coefficients.  Values are immutable; every
operation returns a new polynomial.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def grlex_key(alpha: MultiIndex) -> tuple:
    """Sort key for graded-lexicographic order (total degree first)."""
    return (sum(alpha), tuple(-a for a in alpha))


def index_grid(delta: MultiIndex) -> list[MultiIndex]:
    """All multi-indices ``I <= delta`` in graded-lex order."""
    idx = list(np.ndindex(*(d + 1 for d in delta)))
    return sorted((tuple(int(i) for i in I) for I in idx), key=grlex_key)


class Polynomial:
    __slots__ = ("dim", "_terms", "_hash")

    def __init__(self, dim: int, terms: Mapping[MultiIndex, float] | None = None):
        if dim < 1:
            raise ValueError("polynomial dimension must be positive")
        clean: dict[MultiIndex, float] = {}
        for alpha, coef in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != dim:
                raise ValueError(f"exponent {alpha} does not have length {dim}")
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            coef = float(coef)
            if coef != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + coef
        self.dim = dim
        self._terms = {a: c for a, c in sorted(clean.items(), key=lambda t: grlex_key(t[0])) if c != 0.0}
        self._hash = None

    # construction helpers
    @classmethod
    def zero(cls, dim: int) -> "Polynomial":
        return cls(dim)

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim: int, k: int) -> "Polynomial":
        alpha = [0] * dim
        alpha[k] = 1
        return cls(dim, {tuple(alpha): 1.0})

    @classmethod
    def monomial(cls, alpha: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls(len(alpha), {tuple(alpha): coef})

    @property
    def terms(self) -> dict[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, alpha: Sequence[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> MultiIndex:
        """Componentwise maximal exponent."""
        deg = [0] * self.dim
        for alpha in self._terms:
            deg = [max(d, a) for d, a in zip(deg, alpha)]
        return tuple(deg)

    def total_degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    # algebra
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for alpha, c in other._terms.items():
            out[alpha] = out.get(alpha, 0.0) + c
        return Polynomial(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial(self.dim, {a: c * float(other) for a, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[MultiIndex, float] = {}
        for a1, c1 in self._terms.items():
            for a2, c2 in other._terms.items():
                alpha = tuple(x + y for x, y in zip(a1, a2))
                out[alpha] = out.get(alpha, 0.0) + c1 * c2
        return Polynomial(self.dim, out)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        return self * (1.0 / float(other))

    def __pow__(self, k: int):
        if k < 0 or int(k) != k:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(self.dim, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dim, tuple(self._terms.items())))
        return self._hash

    def __repr__(self):
        return f"Polynomial({self.dim}, {self._terms!r})"

    def __str__(self):
        return self.to_string()

    def to_string(self, names: Sequence[str] | None = None) -> str:
        """Deterministic printer; the output re-parses to the same polynomial."""
        if names is None:
            names = [f"x{k + 1}" for k in range(self.dim)]
        if not self._terms:
            return "0"
        parts = []
        for alpha, c in self._terms.items():
            factors = []
            for name, a in zip(names, alpha):
                if a == 1:
                    factors.append(name)
                elif a > 1:
                    factors.append(f"{name}^{a}")
            mag = abs(c)
            if not factors:
                body = repr(mag)
            elif mag == 1.0:
                body = "*".join(factors)
            else:
                body = repr(mag) + "*" + "*".join(factors)
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first_body = parts[0]
        out = ("-" if first_sign == "-" else "") + first_body
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    # evaluation and calculus
    def __call__(self, point):
        return evaluate(self, point)

    def derivative(self, k: int) -> "Polynomial":
        out = {}
        for alpha, c in self._terms.items():
            if alpha[k] == 0:
                continue
            beta = list(alpha)
            beta[k] -= 1
            out[tuple(beta)] = c * alpha[k]
        return Polynomial(self.dim, out)

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``subs[k]`` for variable ``k``; result lives in the dim of ``subs``."""
        if len(subs) != self.dim:
            raise ValueError(f"need {self.dim} substitutions, got {len(subs)}")
        target = subs[0].dim
        if any(s.dim != target for s in subs):
            raise ValueError("substituted polynomials must share a dimension")
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(k, e):
            if (k, e) not in cache:
                cache[(k, e)] = subs[k] ** e
            return cache[(k, e)]

        result = Polynomial.zero(target)
        for alpha, c in self._terms.items():
            term = Polynomial.constant(target, c)
            for k, e in enumerate(alpha):
                if e:
                    term = term * power(k, e)
            result = result + term
        return result


def evaluate(p: Polynomial, point) -> float:
    """Value of ``p`` at one point (length ``p.dim``)."""
    x = np.asarray(point, dtype=float)
    if x.shape != (p.dim,):
        raise ValueError(f"point has shape {x.shape}, expected ({p.dim},)")
    total = 0.0
    for alpha, c in p.items():
        term = c
        for xi, a in zip(x, alpha):
            if a:
                term *= xi ** a
        total += term
    return float(total)


def evaluate_many(p: Polynomial, points) -> np.ndarray:
    """Vectorised evaluation at the rows of an ``(N, dim)`` array."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[1] != p.dim:
        raise ValueError(f"points have {X.shape[1]} columns, expected {p.dim}")
    out = np.zeros(X.shape[0])
    if p.is_zero():
        return out
    deg = p.degree()
    powers = [np.power.outer(X[:, k], np.arange(deg[k] + 1)) for k in range(p.dim)]
    for alpha, c in p.items():
        term = np.full(X.shape[0], c)
        for k, a in enumerate(alpha):
            if a:
                term = term * powers[k][:, a]
        out += term
    return out


def gradient(p: Polynomial) -> list[Polynomial]:
    return [p.derivative(k) for k in range(p.dim)]


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("box bounds must be non-empty and of equal length")
        for k, (a, b) in enumerate(zip(lo, hi)):
            if not a < b:
                raise ValueError(f"empty region axis {k + 1}: lower {a} >= upper {b}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, radius: float) -> "Box":
        return cls((-radius,) * dim, (radius,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def contains(self, point, tol: float = 0.0) -> bool:
        x = np.asarray(point, dtype=float)
        return bool(np.all(x >= np.subtract(self.lower, tol)) and np.all(x <= np.add(self.upper, tol)))

    def grid(self, resolution: int) -> np.ndarray:
        axes = [np.linspace(a, b, resolution) for a, b in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def __str__(self):
        return " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lower, self.upper))


def map_to_unit_box(p: Polynomial, box: Box) -> Polynomial:
    """Return ``p_U`` with ``p_U(y) = p(lower + (upper - lower) * y)``.

    Substitutes one variable at a time so only univariate binomial
    expansions are formed.
    """
    if box.dim != p.dim:
        raise ValueError(f"box has dimension {box.dim}, polynomial {p.dim}")
    terms = dict(p.items())
    for k, (a, b) in enumerate(zip(box.lower, box.upper)):
        w = b - a
        if a == 0.0 and w == 1.0:
            continue
        new: dict[MultiIndex, float] = {}
        for alpha, c in terms.items():
            e = alpha[k]
            for j in range(e + 1):
                # (a + w y)^e = sum_j C(e, j) a^(e-j) w^j y^j
                coef = c * comb(e, j) * (a ** (e - j)) * (w ** j)
                if coef == 0.0:
                    continue
                beta = alpha[:k] + (j,) + alpha[k + 1:]
                new[beta] = new.get(beta, 0.0) + coef
        terms = new
    return Polynomial(p.dim, terms)


class PolyMatrix:
    """Dense ``rows x cols`` grid of polynomials sharing one dimension."""

    __slots__ = ("entries", "dim")

    def __init__(self, entries: Sequence[Sequence[Polynomial]], dim: int | None = None):
        rows = [list(r) for r in entries]
        if not rows or not rows[0]:
            if dim is None:
                raise ValueError("empty matrix needs an explicit dimension")
        width = len(rows[0]) if rows else 0
        if any(len(r) != width for r in rows):
            raise ValueError("ragged polynomial matrix")
        dims = {e.dim for r in rows for e in r}
        if len(dims) > 1:
            raise ValueError(f"entries have mixed dimensions {sorted(dims)}")
        self.entries = tuple(tuple(r) for r in rows)
        self.dim = dims.pop() if dims else dim

    @classmethod
    def zeros(cls, rows: int, cols: int, dim: int) -> "PolyMatrix":
        return cls([[Polynomial.zero(dim) for _ in range(cols)] for _ in range(rows)], dim)

    @classmethod
    def constant(cls, values, dim: int) -> "PolyMatrix":
        arr = np.atleast_2d(np.asarray(values, dtype=float))
        return cls([[Polynomial.constant(dim, v) for v in row] for row in arr], dim)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.entries), len(self.entries[0]) if self.entries else 0)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    def row(self, i: int) -> tuple[Polynomial, ...]:
        return self.entries[i]

    def column(self, j: int) -> list[Polynomial]:
        return [r[j] for r in self.entries]

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        n, k = self.shape
        k2, m = other.shape
        if k != k2:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        out = []
        for i in range(n):
            row = []
            for j in range(m):
                acc = Polynomial.zero(self.dim)
                for l in range(k):
                    a, b = self.entries[i][l], other.entries[l][j]
                    if not a.is_zero() and not b.is_zero():
                        acc = acc + a * b
                row.append(acc)
            out.append(row)
        return PolyMatrix(out, self.dim)

    def compose(self, subs: Sequence[Polynomial]) -> "PolyMatrix":
        target = subs[0].dim
        return PolyMatrix([[e.compose(subs) for e in r] for r in self.entries], target)

    def map(self, fn) -> "PolyMatrix":
        return PolyMatrix([[fn(e) for e in r] for r in self.entries], self.dim)

    def evaluate(self, point) -> np.ndarray:
        return np.array([[evaluate(e, point) for e in r] for r in self.entries]).reshape(self.shape)

    def evaluate_many(self, points) -> np.ndarray:
        """Array of shape ``(N, rows, cols)``."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((X.shape[0],) + self.shape)
        for i, r in enumerate(self.entries):
            for j, e in enumerate(r):
                if not e.is_zero():
                    out[:, i, j] = evaluate_many(e, X)
        return out

    def __eq__(self, other):
        return isinstance(other, PolyMatrix) and self.entries == other.entries

    def __repr__(self):
        return f"PolyMatrix({self.shape}, dim={self.dim})"


def lie_matrix(template: Sequence[MultiIndex], f: Sequence[Polynomial], G: PolyMatrix) -> PolyMatrix:
    """Matrix ``B`` with ``grad(V_c) . (f + G theta) = c^T B [1; theta]``.

    Row ``i`` belongs to template monomial ``i``; column 0 collects the drift
    ``grad(m_i) . f`` and column ``j >= 1`` the effect of gain ``j - 1``.
    """
    n = len(f)
    if G.shape[0] != n:
        raise ValueError(f"G has {G.shape[0]} rows, dynamics have {n}")
    q = G.shape[1]
    rows = []
    for alpha in template:
        if len(alpha) != n:
            raise ValueError(f"template monomial {alpha} is not of dimension {n}")
        grad = gradient(Polynomial.monomial(alpha))
        row = [sum((grad[k] * f[k] for k in range(n) if not grad[k].is_zero()), Polynomial.zero(n))]
        for j in range(q):
            acc = Polynomial.zero(n)
            for k in range(n):
                if not grad[k].is_zero() and not G[k, j].is_zero():
                    acc = acc + grad[k] * G[k, j]
            row.append(acc)
        rows.append(row)
    return PolyMatrix(rows, n)


def squared_norm(dim: int) -> Polynomial:
    return Polynomial(dim, {tuple(2 if i == k else 0 for i in range(dim)): 1.0 for k in range(dim)})


def linear_combination(coeffs: Iterable[float], polys: Iterable[Polynomial], dim: int) -> Polynomial:
    out: dict[MultiIndex, float] = {}
    for c, p in zip(coeffs, polys):
        if c == 0.0:
            continue
        for alpha, v in p.items():
            out[alpha] = out.get(alpha, 0.0) + c * v
    return Polynomial(dim, out)
