import pytest

from ssodamp.plant import PlantParams, steady_state_init
from ssodamp.synthesis import DesignSpec, synthesize

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def certificate():
    return synthesize(DesignSpec())


@pytest.fixture(scope="session")
def gains(certificate):
    return certificate.gains()


@pytest.fixture(scope="session")
def nominal():
    return PlantParams()


@pytest.fixture(scope="session")
def nominal_x0(nominal):
    return steady_state_init(nominal)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
