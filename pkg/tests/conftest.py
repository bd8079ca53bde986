import os

import pytest
from hypothesis import HealthCheck, settings

from ensemble_oc import get_problem
from ensemble_oc.problem import load_problem

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.large_base_example])
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.large_base_example])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def config_path(name):
    return os.path.abspath(os.path.join(CONFIGS, name))


@pytest.fixture(scope="session")
def linear1d():
    return get_problem("linear1d")


@pytest.fixture(scope="session")
def bang1d():
    return get_problem("bang1d")


@pytest.fixture(scope="session")
def rotation2d():
    return get_problem("rotation2d")


@pytest.fixture(scope="session")
def slab1d():
    return get_problem("slab1d")


@pytest.fixture(scope="session")
def bang1d_symmetric():
    return load_problem(config_path("bang1d_symmetric.json"))[0]


@pytest.fixture(scope="session")
def linear1d_shifted():
    return load_problem(config_path("linear1d_shifted.json"))[0]


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
