import logging

import numpy as np
import pytest

from trajgame.checks import driving_instance, jacobian_error, pedestrian_instance
from trajgame.errors import NonDifferentiable, SingularHessian, SolverError
from trajgame.game_core import QuadraticGame
from trajgame.implicit_layer import (BackwardMode, JacobianMethod, backward, backward_boundary,
                                     backward_interior, backward_one, fd_jacobian, forward, pullback)
from trajgame.scenarios import (ParamLayout, PedestrianGame, PedestrianSetting, enumerate_driving_subspaces,
                                enumerate_pedestrian_subspaces)
from trajgame.solver import Polytope, Status, maximize_on_polytope


def test_quadratic_interior_jacobian_is_identity():
    jac = backward_interior(QuadraticGame(), [0.4], [0.4])
    assert jac.method is JacobianMethod.INTERIOR_IFT
    assert jac.matrix[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_singular_hessian_is_reported():
    with pytest.raises(SingularHessian):
        backward_interior(QuadraticGame(scales=[0.0]), [0.4], [0.4])


def test_singleton_forward_on_quadratic():
    res = forward(QuadraticGame(), [0.3], [Polytope.box([-1.0], [1.0])])
    assert res.indices == [0]
    assert res.argmax[0][0] == pytest.approx(0.3, abs=1e-10)


def test_pedestrian_forward_gives_one_solution_per_subspace():
    s = PedestrianSetting()
    subs = enumerate_pedestrian_subspaces(s)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    ks = [k for k, p in enumerate(subs) if p.context.faster == 0][:1] + \
         [k for k, p in enumerate(subs) if p.context.faster == 1][:1]
    res = forward(PedestrianGame(s), theta, subs, refined=ks)
    assert res.indices == sorted(ks)
    for k, a in res.argmax.items():
        assert subs[k].contains(a, 1e-9)
        assert np.argmax(a) == subs[k].context.faster


def test_driving_forward_two_merge_orders(geometry, past, driving_theta, driving_game):
    subs = enumerate_driving_subspaces(geometry, past, 34)
    res = forward(driving_game, driving_theta, subs, refined=[6, 7])
    assert res.indices == [6, 7]
    for k, a in res.argmax.items():
        assert subs[k].contains(a, 1e-7)
    x0 = res.argmax[6].reshape(2, 2, 35)[:, 0]
    x1 = res.argmax[7].reshape(2, 2, 35)[:, 0]
    # merge step 4: merger ahead in one, behind in the other
    assert (x0[0, 4] - x0[1, 4]) * (x1[0, 4] - x1[1, 4]) < 0


def test_forward_rejects_empty_refined_set():
    with pytest.raises(ValueError):
        forward(QuadraticGame(), [0.0], [Polytope.box([-1.0], [1.0])], refined=[])


def test_forward_collects_partial_failures(caplog):
    subs = [Polytope.box([-1.0], [1.0]), Polytope([[1.0], [-1.0]], [0.0, -1.0])]
    with caplog.at_level(logging.WARNING):
        res = forward(QuadraticGame(), [0.2], subs)
    assert res.indices == [0]
    assert 1 in res.errors
    with pytest.raises(SolverError):
        forward(QuadraticGame(), [0.2], subs, refined=[1])


def test_forward_threads_match_serial():
    s = PedestrianSetting()
    subs = enumerate_pedestrian_subspaces(s)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    a = forward(PedestrianGame(s), theta, subs)
    b = forward(PedestrianGame(s), theta, subs, workers=3)
    for k in a.indices:
        assert np.array_equal(a.argmax[k], b.argmax[k])


def test_pedestrian_interior_matches_fd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        inst = pedestrian_instance(rng)
        err, method = jacobian_error(inst, rng)
        assert method == "InteriorIFT"
        assert err <= 1e-3


def test_driving_interior_matches_fd():
    rng = np.random.default_rng(1)
    inst = driving_instance(rng)
    err, method = jacobian_error(inst, rng, n_dirs=6)
    assert method == "InteriorIFT"
    assert err <= 1e-3


def test_parameter_not_touching_gradient_gives_zero_column():
    # neither car's lane ends in a following scene, so the end weights never enter ∇φ
    inst = driving_instance(np.random.default_rng(3))
    L = ParamLayout(2, 35)
    jac = backward_one(inst.game, inst.theta, inst.report, inst.poly)
    assert jac.method is JacobianMethod.INTERIOR_IFT
    for i in range(2):
        assert np.all(jac.matrix[:, L.end(i)] == 0.0)


@pytest.mark.parametrize("theta", np.linspace(0.6, 3.0, 50))
def test_clamp_family_gradient_is_zero(theta):
    b = 0.5
    poly = Polytope.box([-10.0], [b])
    rep = maximize_on_polytope(QuadraticGame(), [theta], poly)
    jac = backward_one(QuadraticGame(), [theta], rep, poly)
    assert jac.method is JacobianMethod.BOUNDARY_KKT
    assert jac.matrix[0, 0] == 0.0
    fd = fd_jacobian(QuadraticGame(), np.array([theta]), poly)
    assert abs(fd[0, 0]) <= 1e-6


def test_weakly_active_boundary_refused():
    with pytest.raises(NonDifferentiable):
        backward_boundary(QuadraticGame(), [0.5], [0.5], [1.0], 0.0)


def test_pedestrian_speed_cap_boundary_matches_fd():
    s = PedestrianSetting()
    theta = np.array([0.5, 1.0, 4.0, 1.0, 1.1])    # agent 1 wants to exceed the cap
    for poly in enumerate_pedestrian_subspaces(s):
        rep = maximize_on_polytope(PedestrianGame(s), theta, poly)
        if rep.status is not Status.BOUNDARY or len(rep.active_constraints) != 1:
            continue
        jac = backward_one(PedestrianGame(s), theta, rep, poly)
        assert jac.method is JacobianMethod.BOUNDARY_KKT
        fd = fd_jacobian(PedestrianGame(s), theta, poly, base=rep)
        assert np.abs(jac.matrix - fd).max() <= 1e-3 * (1 + np.abs(fd).max())
        break
    else:
        pytest.fail("no single-active boundary solution found")


def test_corner_dispatch_uses_fd_or_zero(caplog):
    game = QuadraticGame([1.0, 2.0])
    poly = Polytope.box([-1.0, -1.0], [0.5, 0.5])
    theta = np.array([1.0, 2.0])
    res = forward(game, theta, [poly])
    assert len(res.reports[0].active_constraints) == 2
    with caplog.at_level(logging.WARNING):
        jac = backward(game, theta, res)[0]
    assert jac.method is JacobianMethod.FINITE_DIFFERENCE
    assert "active constraints" in caplog.text
    assert np.allclose(jac.matrix, 0.0, atol=1e-6)
    z = backward(game, theta, res, corner_zero=True)[0]
    assert z.method is JacobianMethod.ZERO and np.all(z.matrix == 0)


def test_dispatch_rules():
    inst = pedestrian_instance(np.random.default_rng(2))
    res = forward(inst.game, inst.theta, [inst.poly])
    assert backward(inst.game, inst.theta, res)[0].method is JacobianMethod.INTERIOR_IFT
    forced = backward(inst.game, inst.theta, res, mode="ForceFD")[0]
    assert forced.method is JacobianMethod.FINITE_DIFFERENCE
    clamp = forward(QuadraticGame(), [2.0], [Polytope.box([-1.0], [1.0])])
    assert backward(QuadraticGame(), [2.0], clamp, BackwardMode.AUTO)[0].method is JacobianMethod.BOUNDARY_KKT


def test_pullback_matches_fd_of_composed_loss():
    inst = pedestrian_instance(np.random.default_rng(4))
    a0 = inst.report.argmax + 0.1
    jac = backward_one(inst.game, inst.theta, inst.report, inst.poly)
    g = pullback(jac, 2 * (inst.report.argmax - a0))

    def loss(th):
        a = maximize_on_polytope(inst.game, th, inst.poly).argmax
        return float(np.sum((a - a0) ** 2))

    num = np.zeros_like(inst.theta)
    for j in range(num.size):
        e = np.zeros_like(num)
        e[j] = 1e-4 * (1 + abs(inst.theta[j]))
        num[j] = (loss(inst.theta + e) - loss(inst.theta - e)) / (2 * e[j])
    assert np.linalg.norm(g - num) <= 1e-3 * max(1.0, np.linalg.norm(num))


def test_solution_map_is_continuous():
    rng = np.random.default_rng(6)
    inst = pedestrian_instance(rng)
    for _ in range(10):
        d = rng.normal(size=inst.theta.size)
        d /= np.linalg.norm(d)
        moves = [np.linalg.norm(maximize_on_polytope(inst.game, inst.theta + delta * d, inst.poly).argmax
                                - inst.report.argmax) for delta in (1e-2, 1e-3, 1e-4)]
        assert moves[0] > moves[1] > moves[2]
