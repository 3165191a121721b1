"""Acceptance criteria 1-8, each at its stated tolerance.

Every criterion prints one PASS/FAIL line (also repeated in the terminal
summary).  Parts that are unattainable for mathematical reasons are written
as strict xfails with the reason; the criterion line then reports FAIL.
"""
import itertools
import time
from importlib import resources

import numpy as np
import pytest

from polystab import report as rpt
from polystab.benchmark import STAB_THRESHOLD, load_manifest, run_bench
from polystab.bernstein import bernstein_coefficients, pop_lower_bound
from polystab.linprog import FEASTOL, forall_implies_dual, primal_max
from polystab.parsing import parse_polynomial
from polystab.poly import Box, Polynomial, evaluate, evaluate_many, map_to_unit_box
from polystab.problem_file import load_problem
from polystab.synthesis import Status, synthesize
from polystab.verify import check_certificate, rk4_step

from conftest import random_corpus, record_criterion

DATA = resources.files("polystab") / "data"
UNATTAINABLE_STAB = {5, 7}
UNATTAINABLE_INV = {5}
UNATTAINABLE_PUBLISHED = {7, 8, 9, 10, 11}


def _corpus_with_boxes():
    rng = np.random.default_rng(2024)
    for p in random_corpus(seed=2024):
        lo = rng.uniform(-1.0, 0.0, p.dim)
        hi = lo + rng.uniform(0.2, 1.5, p.dim)
        yield p, Box(tuple(lo), tuple(hi))


# 1 -----------------------------------------------------------------------------


def test_criterion_1_bernstein_soundness():
    t0 = time.perf_counter()
    worst = -np.inf
    count = 0
    for p, box in _corpus_with_boxes():
        grid_min = evaluate_many(p, box.grid(41)).min()
        worst = max(worst, pop_lower_bound(p, box) - grid_min)
        count += 1
    seconds = time.perf_counter() - t0
    ok = count == 200 and worst <= 1e-9 and seconds < 30.0
    record_criterion(1, ok, f"{count} polys, max(bound - grid min) = {worst:.3g}, {seconds:.1f} s")
    assert ok


# 2 -----------------------------------------------------------------------------


def test_criterion_2_bernstein_anchors():
    y = ["y"]
    errs = [
        np.abs(bernstein_coefficients(parse_polynomial("2*y + 1", y), (1,)).vector() - [1, 3]).max(),
        np.abs(bernstein_coefficients(parse_polynomial("y^2", y), (2,)).vector() - [0, 0, 1]).max(),
    ]
    for delta in [(0,), (4,), (2, 3), (1, 2, 2)]:
        errs.append(np.abs(bernstein_coefficients(Polynomial.constant(len(delta), 1.75), delta).vector() - 1.75).max())
    anchor = max(errs)
    corner = 0.0
    for p, box in _corpus_with_boxes():
        pu = map_to_unit_box(p, box)
        bf = bernstein_coefficients(pu)
        for I in itertools.product(*[(0, d) for d in bf.degree]):
            pt = [i / d if d else 0.0 for i, d in zip(I, bf.degree)]
            corner = max(corner, abs(bf[I] - evaluate(pu, pt)))
    ok = anchor <= 1e-12 and corner <= 1e-10
    record_criterion(2, ok, f"anchor error {anchor:.2g}, corner error {corner:.2g}")
    assert ok


# 3 -----------------------------------------------------------------------------


def test_criterion_3_farkas_oracle():
    rng = np.random.default_rng(99)
    agree = 0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 10 - n))
        A = rng.uniform(-1, 1, (m, n))
        b = A @ rng.uniform(-0.5, 0.5, n) + rng.uniform(0, 1, m)
        A = np.vstack([A, np.eye(n), -np.ones((1, n))])
        b = np.concatenate([b, np.full(n, 2.0), [2.0 * n]])
        d = rng.uniform(-1, 1, n)
        opt = primal_max(A, b, d).value
        e = opt + rng.choice([-1.0, 1.0]) * rng.uniform(1e-3, 0.5)
        dual = forall_implies_dual(A, b, d, e).is_feasible(feastol=FEASTOL)
        agree += dual == (opt <= e + FEASTOL)
    record_criterion(3, agree == 100, f"{agree}/100 verdicts agree")
    assert agree == 100


# 4 -----------------------------------------------------------------------------


def test_criterion_4_illustrative():
    spec = load_problem(DATA / "illustrative.prob")
    p = spec.problem
    t0 = time.perf_counter()
    r = synthesize(p)
    rep = check_certificate(p, r.c_star, r.theta_star[0], exclusion_radius=1e-3)
    seconds = time.perf_counter() - t0
    pub = check_certificate(p, spec.certificate.V, spec.certificate.theta[0], relaxation=False)
    fluxes = rep.facet_max_flux
    checks = {
        "stabilized": r.status is Status.STABILIZED,
        "slack": r.final_slack <= 1e-6,
        "iterations": r.iterations <= 10,
        "derivative": rep.derivative_max_off_origin <= 1e-7,
        "facets": len(fluxes) == 4 and all(v < 0.0 for v in fluxes.values()),
        "published": pub.derivative_max <= 1e-6,
        "runtime": seconds <= 10.0,
    }
    ok = all(checks.values())
    record_criterion(4, ok, f"{r.status.value} in {r.iterations} it, slack {r.final_slack:.2g}, "
                            f"dV max {rep.derivative_max_off_origin:.2g}, published dV max {pub.derivative_max:.2g}, "
                            f"{seconds:.1f} s" + ("" if ok else f" failed: {[k for k, v in checks.items() if not v]}"))
    assert ok


# 5 -----------------------------------------------------------------------------


def test_criterion_5_hybrid():
    spec = load_problem(DATA / "illustrative_hybrid.prob")
    p = spec.problem
    r = synthesize(p)
    thetas = np.array(r.theta_star)
    pub = check_certificate(p, spec.certificate.V, spec.certificate.theta, relaxation=False)
    checks = {
        "stabilized": r.status is Status.STABILIZED,
        "iterations": r.iterations <= 5,
        "gains": thetas.shape == (4, 4) and np.all(np.abs(thetas) <= 5.0 + 1e-9),
        "published derivative": max(pub.per_box_derivative_max) <= 1e-6,
        "published facets": pub.facets_blocked,
    }
    ok = all(checks.values())
    record_criterion(5, ok, f"{r.status.value} in {r.iterations} it, published per-box dV max "
                            f"{max(pub.per_box_derivative_max):.2g}"
                            + ("" if ok else f" failed: {[k for k, v in checks.items() if not v]}"))
    assert ok


# 6 and 7 ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def bench_rows():
    rows = run_bench(load_manifest())
    return {r["id"]: r for r in rows}


def _stab(row):
    return row["stab"] and row["iterations"] <= 20 and row["final_slack"] <= STAB_THRESHOLD


def test_criterion_6_table(bench_rows):
    manifest = {e["id"]: e for e in load_manifest()["entries"]}
    stab_ids = [i for i, e in manifest.items() if e.get("assert_stab")]
    inv_ids = [i for i, e in manifest.items() if e.get("assert_inv")]
    assert stab_ids == list(range(1, 8)) and inv_ids == [2, 4, 5]
    stab_fail = [i for i in stab_ids if not _stab(bench_rows[i])]
    inv_fail = [i for i in inv_ids if not bench_rows[i]["inv"]]
    recorded = all(bench_rows[i]["status"] for i in range(8, 12))
    ok = not stab_fail and not inv_fail and recorded
    record_criterion(6, ok, f"Stab fails {stab_fail}, Inv fails {inv_fail}, ids 8-11 "
                            + ", ".join(f"{i}:{bench_rows[i]['status']}" for i in range(8, 12)))
    # the attainable part is asserted here; the rest is the strict xfails below
    assert set(stab_fail) <= UNATTAINABLE_STAB and set(inv_fail) <= UNATTAINABLE_INV and recorded


@pytest.mark.parametrize("ident", sorted(UNATTAINABLE_STAB))
@pytest.mark.xfail(strict=True, reason="diagonal quadratic V: the xy term of V' cannot be cancelled or "
                                         "dominated near the origin (decisions ledger)")
def test_criterion_6_stab_unattainable(bench_rows, ident):
    assert _stab(bench_rows[ident])


@pytest.mark.xfail(strict=True, reason="id 5: at the corner (1,1,1) x' = y + 0.5 z^2 = 1.5 for every input, "
                                         "so the facet x = 1 cannot be blocked (decisions ledger)")
def test_criterion_6_inv_id5_unattainable(bench_rows):
    assert bench_rows[5]["inv"]


def test_criterion_7_published_pairs(bench_rows):
    fails = [i for i in range(1, 12) if not bench_rows[i]["published"]["passed"]]
    dv = {i: bench_rows[i]["published"]["derivative_max"] for i in range(1, 12)}
    ex1 = bench_rows[1]["published"]
    flagged = ex1["passed"] and not ex1["derivative_strict"]
    ok = not fails and flagged
    record_criterion(7, ok, f"failing pairs {fails}, example 1 semidefinite flag {'raised' if flagged else 'missing'}, "
                            + "dV max " + ", ".join(f"{i}:{v:.2g}" for i, v in dv.items()))
    assert flagged
    for i in set(range(1, 12)) - UNATTAINABLE_PUBLISHED:
        assert bench_rows[i]["published"]["passed"], i


@pytest.mark.parametrize("ident", sorted(UNATTAINABLE_PUBLISHED))
@pytest.mark.xfail(strict=True, reason="published (u, V) as printed violates V' <= 0 or V >= 0 on the grid "
                                         "(decisions ledger)")
def test_criterion_7_published_unattainable(bench_rows, ident):
    assert bench_rows[ident]["published"]["passed"]


# 8 ----------------------------------------------------------------------------------


def _rk4_error(dt):
    x = np.array([1.0])
    for _ in range(int(round(1.0 / dt))):
        x = rk4_step(lambda z: -z, x, dt)
    return abs(x[0] - np.exp(-1.0))


def test_criterion_8_properties():
    ratio = _rk4_error(0.1) / _rk4_error(0.05)
    spec = load_problem(DATA / "illustrative.prob")
    docs = []
    for _ in range(2):
        r = synthesize(spec.problem)
        ver = check_certificate(spec.problem, r.c_star, r.theta_star[0])
        docs.append(rpt.dumps(rpt.strip_timing(rpt.run_report(spec.problem, r, ver, source="illustrative.prob"))))
    identical = docs[0] == docs[1]
    ok = 12.0 <= ratio <= 20.0 and identical
    record_criterion(8, ok, f"RK4 ratio {ratio:.2f}, reports identical: {identical}; "
                            "module invariants run in test_poly/bernstein/linprog/synthesis/verify/cli")
    assert ok
