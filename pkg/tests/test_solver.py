import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from trajgame.errors import Infeasible
from trajgame.game_core import Game, MeasureKind, QuadraticGame, StageTerms, TimeGrid
from trajgame.scenarios import PedestrianGame, PedestrianSetting, enumerate_pedestrian_subspaces
from trajgame.solver import (Polytope, SolveOptions, Status, find_interior_point,
                             maximize_on_polytope, verify_local_ne)


class DenseQuadratic(Game):
    """Single-agent potential −½(a−θ)ᵀQ(a−θ); a test-local oracle game."""

    def __init__(self, Q):
        self.Q = np.asarray(Q, float)
        self.n_agents = 1
        self.action_dim = self.Q.shape[0]
        self.n_params = self.Q.shape[0]
        self.grid = TimeGrid(3, 1.0, MeasureKind.DIRAC_AT_T)

    def stage_terms(self, theta, a):
        own = np.zeros((1, 4))
        r = a - theta
        own[0, -1] = -0.5 * r @ self.Q @ r
        return StageTerms(np.zeros(4), own, np.zeros((1, 4)))

    def potential_gradient(self, theta, a):
        return -self.Q @ (a - theta)

    def potential_hessian(self, theta, a):
        return -self.Q

    def mixed_jacobian(self, theta, a):
        return self.Q.copy()


def test_box_midpoint():
    a = find_interior_point(Polytope.box([0, 0], [1, 1]))
    assert np.allclose(a, [0.5, 0.5])


def test_interior_point_of_pedestrian_subspace():
    for poly in enumerate_pedestrian_subspaces(PedestrianSetting()):
        a = find_interior_point(poly)
        assert np.all(poly.slacks(a) >= 1e-6)


def test_contradictory_constraints_are_infeasible():
    poly = Polytope([[1.0], [-1.0]], [0.0, -1.0])     # a <= 0 and a >= 1
    with pytest.raises(Infeasible):
        find_interior_point(poly)
    rep = maximize_on_polytope(QuadraticGame(), [0.0], poly)
    assert rep.status is Status.INFEASIBLE


def test_polytope_rejects_zero_rows():
    with pytest.raises(ValueError):
        Polytope([[0.0, 0.0]], [1.0])


def test_unconstrained_vertex_inside():
    theta = 0.3
    rep = maximize_on_polytope(QuadraticGame(), [theta], Polytope.box([theta - 1], [theta + 1]))
    assert rep.status is Status.INTERIOR
    assert rep.argmax[0] == pytest.approx(theta, abs=1e-10)
    assert np.all(rep.multipliers == 0)


def test_clamp_multiplier():
    theta, b = 1.0, 0.5
    poly = Polytope.box([-10.0], [b])
    rep = maximize_on_polytope(QuadraticGame(), [theta], poly)
    assert rep.status is Status.BOUNDARY
    assert rep.argmax[0] == pytest.approx(b, abs=1e-12)
    assert rep.multipliers[rep.active_constraints[0]] == pytest.approx(2 * (theta - b), rel=1e-9)


@given(st.integers(0, 10_000))
def test_box_solution_is_clipped_target(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    scales = rng.uniform(0.2, 3.0, n)
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0.1, 3, n)
    theta = rng.uniform(-3, 3, n)
    rep = maximize_on_polytope(QuadraticGame(scales), theta, Polytope.box(lo, hi))
    assert np.allclose(rep.argmax, np.clip(theta, lo, hi), atol=1e-9)
    assert np.all(rep.multipliers >= 0)
    assert rep.kkt_residual <= 1e-8


@given(st.integers(0, 10_000))
def test_general_polytope_matches_slsqp(seed):
    rng = np.random.default_rng(seed)
    n = 3
    A = rng.normal(size=(n, n))
    Q = A @ A.T + 0.5 * np.eye(n)
    theta = rng.normal(size=n) * 2
    G = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(3, n))])
    b = np.concatenate([np.ones(n) * 1.5, np.ones(n) * 1.5, rng.uniform(0.2, 1.0, 3)])
    poly = Polytope(G, b)
    game = DenseQuadratic(Q)
    rep = maximize_on_polytope(game, theta, poly)
    ref = minimize(lambda a: 0.5 * (a - theta) @ Q @ (a - theta), np.zeros(n),
                   jac=lambda a: Q @ (a - theta), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda a: b - G @ a, "jac": lambda a: -G}],
                   options={"ftol": 1e-14, "maxiter": 500})
    assert np.allclose(rep.argmax, ref.x, atol=1e-5)
    assert poly.contains(rep.argmax, 1e-9)


def test_pedestrian_matches_grid_search():
    setting = PedestrianSetting()
    game = PedestrianGame(setting)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    for poly in enumerate_pedestrian_subspaces(setting):
        rep = maximize_on_polytope(game, theta, poly)
        g = game.restricted(poly)
        xs = np.arange(0.0, 3.0 + 1e-9, 1e-3)
        A1, A2 = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([A1.ravel(), A2.ravel()], axis=1)
        pts = pts[np.all(pts @ poly.G.T <= poly.b + 1e-12, axis=1)]
        # closed form written out independently of the game class
        u = poly.context.sign * (setting.z2 * pts[:, 0] - setting.z1 * pts[:, 1])
        vals = (-theta[0] / u - theta[1] * (pts[:, 0] - theta[2]) ** 2
                - theta[3] * (pts[:, 1] - theta[4]) ** 2)
        best = pts[np.argmax(vals)]
        # local polish of the grid optimum inside the subspace
        ref = minimize(lambda a: -g.potential(theta, a), best, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": lambda a: poly.b - poly.G @ a}],
                       options={"ftol": 1e-14})
        assert np.allclose(rep.argmax, ref.x, atol=1e-3)


def test_barrier_trace_is_monotone_within_stage():
    setting = PedestrianSetting()
    game = PedestrianGame(setting)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    poly = enumerate_pedestrian_subspaces(setting)[0]
    rep = maximize_on_polytope(game, theta, poly)
    assert rep.trace
    for (mu0, f0, _), (mu1, f1, _) in zip(rep.trace[:-1], rep.trace[1:]):
        if mu0 == mu1:
            assert f1 >= f0 - 1e-12 * (1 + abs(f0))


def test_warm_start_reproduces_cold_solution():
    setting = PedestrianSetting()
    game = PedestrianGame(setting)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    for poly in enumerate_pedestrian_subspaces(setting):
        cold = maximize_on_polytope(game, theta, poly)
        warm = maximize_on_polytope(game, theta + 1e-3, poly, start=cold.argmax,
                                    active_hint=cold.active_constraints)
        ref = maximize_on_polytope(game, theta + 1e-3, poly)
        assert np.allclose(warm.argmax, ref.argmax, atol=1e-9)


def test_local_ne_certificate_and_negative_control():
    rep = maximize_on_polytope(QuadraticGame(), [0.2], Polytope.box([-1], [1]))
    assert verify_local_ne(QuadraticGame(), [0.2], rep.argmax, 1e-3, 200, rng=0) <= 0.0

    setting = PedestrianSetting()
    game = PedestrianGame(setting)
    theta = np.array([1.0, 1.0, 1.4, 1.0, 1.1])
    poly = enumerate_pedestrian_subspaces(setting)[0]
    rep = maximize_on_polytope(game, theta, poly)
    assert verify_local_ne(game, theta, rep.argmax, 1e-3, 1000, poly, rng=1) <= 1e-8
    bad = rep.argmax + np.array([0.1, 0.0])
    assert verify_local_ne(game, theta, bad, 1e-3, 1000, rng=2) > 0


def test_solve_options_control_precision():
    opts = SolveOptions(grad_tol=1e-6)
    rep = maximize_on_polytope(QuadraticGame(), [0.3], Polytope.box([-1], [1]), opts)
    assert rep.converged
