import numpy as np
import pytest

from biped3d import hzd
from biped3d.gaits import load_bundled
from biped3d.params import RobotParams


@pytest.fixture(scope="session")
def params():
    return RobotParams()


@pytest.fixture(scope="session")
def torque_gait():
    return load_bundled("torque")


@pytest.fixture(scope="session")
def frontal_gait():
    return load_bundled("torque-frontal")


@pytest.fixture(scope="session")
def torque_report(torque_gait, params):
    return hzd.linearize(torque_gait, params, with_F=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for s in sorted(lines):
            terminalreporter.write_line(s)
