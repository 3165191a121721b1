import csv
import io
from importlib import resources

import numpy as np
import pytest

from polystab.linprog import FEASTOL
from polystab.poly import evaluate_many, squared_norm
from polystab.problem_file import load_problem, parse_problem
from polystab.synthesis import synthesize
from polystab.verify import (
    ClosedLoop,
    check_certificate,
    export_field_grid,
    rk4_step,
    simulate,
    write_field_csv,
    write_trajectory_csv,
)

DATA = resources.files("polystab") / "data"


@pytest.fixture(scope="module")
def illustrative():
    return load_problem(DATA / "illustrative.prob")


@pytest.fixture(scope="module")
def synthesized(illustrative):
    r = synthesize(illustrative.problem)
    return r.c_star, r.theta_star[0]


def test_rk4_order():
    def err(dt):
        x = np.array([1.0])
        for _ in range(int(round(1.0 / dt))):
            x = rk4_step(lambda z: -z, x, dt)
        return abs(x[0] - np.exp(-1.0))

    ratio = err(0.1) / err(0.05)
    assert 12.0 <= ratio <= 20.0


def test_origin_is_fixed(illustrative):
    traj = simulate(illustrative.problem, illustrative.certificate.theta[0], [0.0, 0.0], horizon=1.0)
    assert np.all(traj.states == 0.0)
    assert len(traj) == 101 and np.all(np.diff(traj.times) > 0)


def test_closed_loop_converges(illustrative):
    traj = simulate(illustrative.problem, illustrative.certificate.theta[0], [0.9, 0.9], horizon=20.0)
    assert traj.box_exit_time is None and not traj.aborted
    assert np.linalg.norm(traj.final_state) <= 1e-2


def test_open_loop_leaves_the_box(illustrative):
    traj = simulate(illustrative.problem, None, [0.9, 0.9], horizon=20.0, open_loop=True)
    assert traj.box_exit_time is not None


def test_field_grid(illustrative):
    p = illustrative.problem
    rows = export_field_grid(p, np.zeros(p.n_gains), 3)
    assert rows.shape == (9, 2 + 2 + 2)
    at = {tuple(r[:2]): r[2:4] for r in rows}
    assert np.allclose(at[(1.0, 1.0)], [1.0, -1.0])
    buf = io.StringIO()
    write_field_csv(rows, 2, buf)
    assert buf.getvalue().splitlines()[0] == "x1,x2,dx1,dx2,u1,u2"


def test_trajectory_csv(illustrative):
    traj = simulate(illustrative.problem, illustrative.certificate.theta[0], [0.5, -0.25], horizon=0.05)
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["t", "x1", "x2", "u1", "u2"]
    assert len(rows) == len(traj) + 1
    assert float(rows[1][1]) == 0.5


def test_published_illustrative_pair(illustrative):
    cert = illustrative.certificate
    rep = check_certificate(illustrative.problem, cert.V, cert.theta[0])
    assert rep.derivative_max <= 1e-6
    assert rep.facets_blocked and len(rep.facets) == 4
    assert rep.lyapunov_ok


def test_synthesized_certificate(illustrative, synthesized):
    c, theta = synthesized
    rep = check_certificate(illustrative.problem, c, theta, exclusion_radius=1e-3)
    assert rep.derivative_max <= 1e-7 and rep.certificate_ok
    assert all(v < 0.0 for v in rep.facet_max_flux.values())


def test_semidefinite_example_is_flagged():
    spec = load_problem(DATA / "bench" / "ex01.prob")
    rep = check_certificate(spec.problem, spec.certificate.V, spec.certificate.theta[0], relaxation=False)
    assert rep.derivative_max == 0.0 and rep.derivative_ok
    assert not rep.derivative_strict
    assert rep.lyapunov_ok


def test_zero_certificate_fails():
    p = load_problem(DATA / "unstable_1d.prob").problem
    rep = check_certificate(p, [0.0], [0.0], epsilon_prime=p.options.epsilon)
    assert rep.lyapunov_min_margin < 0.0
    assert not rep.certificate_ok and not rep.passed


def test_lyapunov_decreases_along_trajectories(illustrative):
    cert = illustrative.certificate
    p = illustrative.problem
    rep = check_certificate(p, cert.V, cert.theta[0], relaxation=False, exclusion_radius=1e-3)
    assert rep.derivative_strict
    rng = np.random.default_rng(0)
    for x0 in rng.uniform(-0.95, 0.95, size=(5, 2)):
        traj = simulate(p, cert.theta[0], x0, horizon=5.0)
        v = evaluate_many(cert.V, traj.states)
        assert np.all(np.diff(v) <= 1e-6)


def test_invariance_consistency(illustrative, synthesized):
    c, theta = synthesized
    p = illustrative.problem
    margin = p.options.facet_margin
    rep = check_certificate(p, c, theta, relaxation=False)
    assert margin > 0 and all(v < -margin / 2 for v in rep.facet_max_flux.values())
    rng = np.random.default_rng(1)
    for x0 in rng.uniform(-1.0, 1.0, size=(100, 2)):
        traj = simulate(p, theta, x0, dt=2e-2, horizon=2.0)
        assert traj.box_exit_time is None


def test_relaxation_and_grid_agree_in_the_sound_direction(illustrative):
    """LP bounds bracket the grid: a relaxation margin beyond 10 feastol always has the grid's sign."""
    p = illustrative.problem
    eps = p.options.epsilon
    rng = np.random.default_rng(3)
    X = p.region.grid(41)
    norm = (X ** 2).sum(1)
    agreements = 0
    for _ in range(15):
        c = rng.uniform(-0.05, 0.3, len(p.template))
        theta = rng.uniform(-5, 5, p.n_gains)
        rep = check_certificate(p, c, theta)
        V = p.lyapunov(c)
        grid_pos = (evaluate_many(V, X) - eps * norm).min()
        loop = ClosedLoop(p, theta)
        F = loop.field_many(X, 0)
        dV = sum(evaluate_many(V.derivative(k), X) * F[:, k] for k in range(p.n))
        grid_der = (dV + eps * norm).max()
        d = rep.certificate_details
        if d["positivity_min"] > 10 * FEASTOL:
            assert grid_pos > 0
            agreements += 1
        if grid_pos < -10 * FEASTOL:
            assert d["positivity_min"] < 0
            agreements += 1
        if d["derivative_max"] < -10 * FEASTOL:
            assert grid_der < 0
        if grid_der > 10 * FEASTOL:
            assert d["derivative_max"] > 0
            agreements += 1
    assert agreements > 0


def test_hybrid_box_membership_lowest_index(illustrative):
    p = illustrative.problem
    th = [np.full(4, float(k)) for k in range(4)]
    loop = ClosedLoop(p, th)
    assert loop.box_index(np.array([0.0, 0.0])) == 0
    assert loop.box_index(np.array([0.5, 0.0])) == 2
    assert loop.box_index(np.array([0.5, 0.5])) == 3
    assert loop.box_index(np.array([2.0, 2.0])) == 3


def test_simulate_rejects_bad_start(illustrative):
    with pytest.raises(ValueError):
        simulate(illustrative.problem, np.zeros(4), [2.0, 0.0])
    with pytest.raises(ValueError):
        simulate(illustrative.problem, np.zeros(4), [0.0, 0.0], dt=0.0)
