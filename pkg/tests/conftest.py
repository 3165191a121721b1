import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from polystab.poly import Polynomial, index_grid

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_polynomial(rng: np.random.Generator, n: int, degree: int, density: float = 0.6) -> Polynomial:
    """Coefficients U[-1, 1] on a random subset of monomials of total degree <= degree."""
    terms = {}
    for alpha in index_grid((degree,) * n):
        if sum(alpha) <= degree and rng.random() < density:
            terms[alpha] = rng.uniform(-1.0, 1.0)
    if not terms:
        terms[(0,) * n] = rng.uniform(-1.0, 1.0)
    return Polynomial(n, terms)


def random_corpus(seed: int = 0, count: int = 200, max_n: int = 3, max_degree: int = 4):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(0, max_degree + 1))
        out.append(random_polynomial(rng, n, d))
    return out


@pytest.fixture(scope="session")
def corpus():
    return random_corpus()


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str = ""):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
