import numpy as np
import pytest

from scan_kalman import SsmSpec, validate_spec

# (criterion, passed, detail) rows collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def scalar_two_step():
    """d=1, T=2, sigma0=1, a=0.5, b=0, q=1, r=1, w=(1, 1)."""
    spec = validate_spec(SsmSpec.time_invariant(2, a=0.5, b=0.0, q=1.0, r=1.0, sigma0=1.0))
    return spec.with_observations([np.array([1.0]), np.array([1.0])])
