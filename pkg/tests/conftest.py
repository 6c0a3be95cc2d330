import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mpml.pde_model import ModelProblem

settings.register_profile("ci", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


# shared instance so cached meshes are reused, also by hypothesis tests
_PROBLEM = ModelProblem()


@pytest.fixture(scope="session")
def problem():
    return _PROBLEM


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, density=0.3, shift=1.0):
    """Sparse-ish SPD matrix: random symmetric pattern made diagonally dominant."""
    M = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    M = np.triu(M, 1)
    M = M + M.T
    M += np.diag(np.abs(M).sum(axis=1) + shift + rng.random(n))
    return M


# acceptance criteria report: number -> (passed, summary line)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {line}")
