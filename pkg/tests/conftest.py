import math

import pytest

from irrinvest.model import CobbDouglas, ModelParams

ACCEPTANCE_LINES = []


@pytest.fixture
def ref_params():
    """Zero decay, sigma^2 = 2, unit discount, T = 10."""
    return ModelParams.constant(0.0, math.sqrt(2.0), 1.0, horizon_T=10.0)


@pytest.fixture
def sqrt_revenue():
    return CobbDouglas(0.5)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
