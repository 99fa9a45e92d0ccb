import numpy as np
import pytest

from tube_empc.scenario import build_system, load_scenario

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def e1():
    return build_system(load_scenario("e1"))


@pytest.fixture(scope="session")
def e2():
    return build_system(load_scenario("e2"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
