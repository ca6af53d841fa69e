import os

import pytest
from hypothesis import HealthCheck, settings

from crossover_mcem import CrossoverDesign, ParameterVector

from .helpers import simulate

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def small_design():
    return CrossoverDesign(((1, 2), (2, 1)), 2, (4, 3))


@pytest.fixture
def small_params():
    return ParameterVector([1.0, 0.3, -0.5, 0.8], 1.2, 0.6)


@pytest.fixture
def small_data(small_design, small_params):
    return simulate(small_design, small_params, seed=3, miss=0.25)


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
