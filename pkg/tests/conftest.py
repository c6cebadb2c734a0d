import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fchflow.model import CoefficientLaw, ModelParams
from fchflow.spectral import Grid

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def grid2():
    return Grid.cube(2, 32)


@pytest.fixture
def grid3():
    return Grid.cube(3, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def params():
    return ModelParams(eta=-1.0)


@pytest.fixture
def variable_params():
    return ModelParams(
        eta=-0.7,
        viscosity=CoefficientLaw.bounded_smooth(0.5, 0.5, 0.2),
        mobility=CoefficientLaw.bounded_smooth(0.5, 0.2, 0.5),
    )


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
