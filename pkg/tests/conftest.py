import numpy as np
import pytest
from hypothesis import settings

from trajgame.config import Config
from trajgame.pipeline import synth_generate
from trajgame.scenarios import DrivingGame, DrivingParams, RoadGeometry

# filled by tests/test_acceptance.py and echoed at the end of the run
ACCEPTANCE_LINES = []

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def merge_past(window=15, dt=0.2, merger=(100.0, -3.5, 20.0), other=(85.0, 0.0, 22.0)):
    """Both cars at constant speed; last past position at the given x."""
    past = np.zeros((2, window, 2))
    tau = (np.arange(window) - (window - 1)) * dt
    for i, (x0, y0, v) in enumerate((merger, other)):
        past[i, :, 0] = x0 + v * tau
        past[i, :, 1] = y0
    return past


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jac(f, x, h=1e-6):
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.fixture
def cfg():
    return Config()


@pytest.fixture
def geometry():
    return RoadGeometry()


@pytest.fixture
def past():
    return merge_past()


@pytest.fixture
def driving_game(geometry, past):
    return DrivingGame(geometry, past, 34)


@pytest.fixture
def driving_theta():
    return DrivingParams.terminal(2, 34, [20.0, 22.0]).to_vector()


@pytest.fixture(scope="session")
def small_synth():
    return synth_generate(None, None, 12, 0.0, 7, Config())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
