import numpy as np
import pytest

from otrisk.finite import FiniteInstance
from otrisk.measures import ClaimModel

ACCEPTANCE_LINES = []


def record(label, ok, detail=""):
    """Log one acceptance verdict; printed again in the session summary."""
    line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def two_point():
    return FiniteInstance([0, 1], [1.0, 0.0], [0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]], 0.5)


@pytest.fixture
def claim_model():
    return ClaimModel(claim_rate=1.0, safety_loading=0.1, m1=11 / 6, m2=11.0, horizon=100.0, p=2.0)


@pytest.fixture
def reins_model():
    return ClaimModel(claim_rate=1.0, safety_loading=0.1, m1=11 / 6, m2=11.0, horizon=100.0, p=2.0, reinsurer_loading=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
