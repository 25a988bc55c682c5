import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from backstepping_kkl.cascade import CascadeParams
from backstepping_kkl.grid import SpatialGrid
from backstepping_kkl.models import oscillator_model, parameter_estimation_model

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid101():
    return SpatialGrid(101)


@pytest.fixture(scope="session")
def ex1():
    return parameter_estimation_model(), CascadeParams(0.5, 1.0)


@pytest.fixture(scope="session")
def ex2():
    return oscillator_model(), CascadeParams(0.0, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record a criterion verdict; the lines are echoed in the terminal summary."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
