import numpy as np
import pytest

from coordlqr import ConstraintPolicy, InitialCondition, make_ensemble

EXAMPLE_MU = (0.3, 0.2, 0.3, 0.1, 0.4)
EXAMPLE_X0 = (3.0, 2.0, 1.0, 4.0, 5.0)

ACCEPTANCE_LINES = []


@pytest.fixture
def example_ensemble():
    return make_ensemble(A=2.0, B=1.0, Q=1.0, R=1.0, mu=EXAMPLE_MU)


@pytest.fixture
def example_policy():
    return ConstraintPolicy.constant(-1.5)


@pytest.fixture
def example_ic():
    return InitialCondition.from_vectors(EXAMPLE_X0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
