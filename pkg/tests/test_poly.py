import numpy as np
import pytest
from hypothesis import given, strategies as st

from polystab.parsing import PolynomialSyntaxError, parse_polynomial
from polystab.poly import (
    Box,
    PolyMatrix,
    Polynomial,
    evaluate,
    evaluate_many,
    gradient,
    lie_matrix,
    linear_combination,
    map_to_unit_box,
)

from conftest import random_polynomial

X12 = ["x1", "x2"]
F1 = "x2 - x1^2 + 3*x2^2 - 2*x1*x2"


def P(text, names=("x",)):
    return parse_polynomial(text, list(names))


# parsing -------------------------------------------------------------------


def test_parse_illustrative_drift():
    p = P(F1, X12)
    assert p.terms == {(0, 1): 1.0, (2, 0): -1.0, (0, 2): 3.0, (1, 1): -2.0}


def test_parse_zero_and_expansion():
    assert P("0").terms == {}
    assert P("0").is_zero()
    assert P("(x+1)^2").terms == {(0,): 1.0, (1,): 2.0, (2,): 1.0}


def test_parse_decimals_and_unary():
    p = P("-1.5e-3*x^3 + -(x) - +2", ["x"])
    assert p.terms == {(3,): -1.5e-3, (1,): -1.0, (0,): -2.0}


@pytest.mark.parametrize("text", ["2x", "x^", "x+", "(x", "y", "x^-1", "x^1.5", "x $ 1", ""])
def test_parse_errors(text):
    with pytest.raises(PolynomialSyntaxError):
        P(text)


def test_printer_round_trip(corpus):
    for p in corpus[:100]:
        names = [f"v{k}" for k in range(p.dim)]
        assert parse_polynomial(p.to_string(names), names) == p


# evaluation and calculus ------------------------------------------------------


def test_evaluate_examples():
    assert evaluate(P("x^2 + y", "xy"), (2, 3)) == 7.0
    assert evaluate(Polynomial.zero(3), (1.0, -2.0, 5.0)) == 0.0
    assert evaluate(P(F1, X12), (1, 1)) == 1.0


def test_gradient_examples():
    g = gradient(P("x1^2*x2", X12))
    assert g[0] == P("2*x1*x2", X12) and g[1] == P("x1^2", X12)
    assert all(d.is_zero() for d in gradient(Polynomial.constant(3, 5.0)))
    V = P("0.01*x1^2 + 0.01*x2^2 + 0.009*x1*x2", X12)
    gx, gy = gradient(V)
    assert np.isclose(gx.coefficient((1, 0)), 0.02) and np.isclose(gx.coefficient((0, 1)), 0.009)
    assert np.isclose(gy.coefficient((0, 1)), 0.02) and np.isclose(gy.coefficient((1, 0)), 0.009)


def test_map_to_unit_box_examples():
    box = Box((-1.0,), (1.0,))
    assert map_to_unit_box(P("x"), box) == P("2*x - 1")
    assert map_to_unit_box(P("x^2"), box) == P("4*x^2 - 4*x + 1")
    p = P(F1, X12)
    assert map_to_unit_box(p, Box((0.0, 0.0), (1.0, 1.0))) == p


def test_lie_matrix_examples():
    x = Polynomial.variable(1, 0)
    B = lie_matrix([(2,)], [-x], PolyMatrix.zeros(1, 1, 1))
    assert B[0, 0] == P("-2*x^2") and B[0, 1].is_zero()
    B = lie_matrix([(1,)], [Polynomial.zero(1)], PolyMatrix.constant([[1.0]], 1))
    assert B[0, 0].is_zero() and B[0, 1] == Polynomial.constant(1, 1.0)
    x1, x2 = Polynomial.variable(2, 0), Polynomial.variable(2, 1)
    B = lie_matrix([(1, 1)], [x2, -x1], PolyMatrix.zeros(2, 1, 2))
    assert B[0, 0] == P("x2^2 - x1^2", X12) and B[0, 1].is_zero()


def test_box_rejects_empty_axis():
    with pytest.raises(ValueError, match="empty region axis 2"):
        Box((-1.0, 1.0), (1.0, 1.0))


# properties ----------------------------------------------------------------

seeds = st.integers(0, 2 ** 32 - 1)


def _rel_close(a, b, tol=1e-9):
    return np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.abs(b)))


@given(seeds)
def test_ring_laws(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    p = random_polynomial(rng, n, int(rng.integers(0, 5)))
    q = random_polynomial(rng, n, int(rng.integers(0, 5)))
    X = rng.uniform(-2, 2, size=(100, n))
    pv, qv = evaluate_many(p, X), evaluate_many(q, X)
    assert _rel_close(evaluate_many(p + q, X), pv + qv)
    assert _rel_close(evaluate_many(p - q, X), pv - qv)
    assert _rel_close(evaluate_many(p * q, X), pv * qv)
    assert _rel_close(evaluate_many(p ** 2, X), pv ** 2)


@given(seeds)
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    p = random_polynomial(rng, n, 4)
    grad = gradient(p)
    h = 1e-5
    for x in rng.uniform(-0.9, 0.9, size=(10, n)):
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            fd = (evaluate(p, x + e) - evaluate(p, x - e)) / (2 * h)
            assert abs(fd - evaluate(grad[k], x)) <= 1e-4


@given(seeds)
def test_map_to_unit_box_matches_substitution(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    p = random_polynomial(rng, n, 4)
    lo = rng.uniform(-2, 0.5, n)
    hi = lo + rng.uniform(0.1, 2.0, n)
    box = Box(tuple(lo), tuple(hi))
    pu = map_to_unit_box(p, box)
    Y = rng.uniform(0, 1, size=(100, n))
    assert _rel_close(evaluate_many(pu, Y), evaluate_many(p, lo + (hi - lo) * Y))


@given(seeds)
def test_lie_matrix_identity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    q = int(rng.integers(1, 3))
    f = [random_polynomial(rng, n, 3) for _ in range(n)]
    G = PolyMatrix([[random_polynomial(rng, n, 2) for _ in range(q)] for _ in range(n)], n)
    template = [a for a in sorted({tuple(rng.integers(0, 3, n)) for _ in range(5)}) if sum(a) > 0]
    if not template:
        template = [(1,) + (0,) * (n - 1)]
    c = rng.uniform(-1, 1, len(template))
    theta = rng.uniform(-1, 1, q)
    B = lie_matrix(template, f, G)
    V = linear_combination(c, [Polynomial.monomial(m) for m in template], n)
    grad = gradient(V)
    for x in rng.uniform(-1, 1, size=(20, n)):
        Bx = B.evaluate(x)
        lhs = c @ Bx @ np.concatenate([[1.0], theta])
        field = np.array([evaluate(fk, x) for fk in f]) + G.evaluate(x) @ theta
        rhs = np.array([evaluate(gk, x) for gk in grad]) @ field
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


def test_grlex_printing_is_deterministic():
    a = P("x1*x2 + x1^2 + 1 + x2", X12)
    b = P("x2 + 1 + x1^2 + x1*x2", X12)
    assert a.to_string(X12) == b.to_string(X12)
    assert hash(a) == hash(b) and a == b
