import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajgame.game_core import (JointTrajectory, MeasureKind, QuadraticGame, TimeGrid,
                                check_potential_identity, mixed_jacobian, potential,
                                potential_gradient, potential_hessian, utility)


def test_time_grid_rejects_short_horizon():
    with pytest.raises(ValueError):
        TimeGrid(2, 0.2)
    with pytest.raises(ValueError):
        TimeGrid(5, 0.0)


def test_time_grid_weights():
    assert TimeGrid(4, 0.2).weights().tolist() == [1, 1, 1, 1, 1]
    w = TimeGrid(4, 0.2, MeasureKind.DIRAC_AT_T).weights()
    assert w.tolist() == [0, 0, 0, 0, 1]


def test_zero_scale_single_agent_has_zero_utility():
    g = QuadraticGame(scales=[0.0])
    assert utility(g, 0, [0.3], [1.7]) == 0.0


def test_single_agent_potential_equals_utility():
    g = QuadraticGame(scales=[1.5])
    for a in np.linspace(-2, 2, 9):
        assert potential(g, [0.4], [a]) == utility(g, 0, [0.4], [a])


def test_quadratic_derivatives_at_vertex():
    g = QuadraticGame()
    assert potential_gradient(g, [0.7], [0.7])[0] == 0.0
    assert potential_hessian(g, [0.7], [0.1])[0, 0] == -2.0
    assert mixed_jacobian(g, [0.7], [0.1])[0, 0] == 2.0


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4), st.integers(0, 1000))
def test_quadratic_identity_random(scales, seed):
    rng = np.random.default_rng(seed)
    g = QuadraticGame(scales)
    n = len(scales)
    th, a = rng.normal(size=n), rng.normal(size=n)
    i = int(rng.integers(n))
    r = check_potential_identity(g, th, a, i, rng.normal(size=1))
    assert r <= 1e-12


def test_identity_zero_for_same_action():
    g = QuadraticGame([1.0, 2.0])
    assert check_potential_identity(g, [0.1, 0.2], [1.0, -1.0], 1, [-1.0]) == 0.0


def test_joint_trajectory_constant_velocity():
    dt = 0.2
    past = np.zeros((1, 3, 2))
    past[0, :, 0] = [-3.0, -2.0, -1.0]
    pos = np.zeros((1, 5, 2))
    pos[0, :, 0] = np.arange(5.0)
    jt = JointTrajectory(pos, past, dt)
    assert np.allclose(jt.velocity[..., 0], 5.0)
    assert np.allclose(jt.acceleration[..., 0], 0.0)


def test_joint_trajectory_single_past_point_is_standstill():
    past = np.zeros((1, 1, 2))
    pos = np.zeros((1, 4, 2))
    pos[0, 0, 0] = 1.0
    jt = JointTrajectory(pos, past, 0.2)
    assert jt.velocity[0, 0, 0] == pytest.approx(5.0)
