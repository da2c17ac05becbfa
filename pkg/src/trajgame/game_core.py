"""Trajectory games with a common-coupled stage utility and their potential.

A game is described by its stage-utility decomposition

    u^i_t = common_t + own^i_t + others^i_t

weighted by a measure over the stages 0..T.  The potential of such a game is
the measure-weighted sum of the common term and all own terms.  Subclasses
supply the stage terms and the analytic first and second derivatives of the
potential; the generic helpers here evaluate utilities, the potential and the
unilateral-deviation identity.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteUtility


class MeasureKind(enum.Enum):
    COUNTING = "counting"
    DIRAC_AT_T = "dirac_at_T"


@dataclass(frozen=True)
class TimeGrid:
    num_steps: int
    dt: float
    measure_kind: MeasureKind = MeasureKind.COUNTING

    def __post_init__(self):
        if self.num_steps < 3:
            raise ValueError("TimeGrid needs num_steps >= 3")
        if not self.dt > 0:
            raise ValueError("TimeGrid needs dt > 0")

    @property
    def n_stages(self) -> int:
        return self.num_steps + 1

    def weights(self) -> np.ndarray:
        """Measure mass of each stage 0..T."""
        if self.measure_kind is MeasureKind.COUNTING:
            return np.ones(self.n_stages)
        w = np.zeros(self.n_stages)
        w[-1] = 1.0
        return w


@dataclass(frozen=True)
class StageTerms:
    """Per-stage values of the decomposition, shapes (T+1,), (n, T+1), (n, T+1)."""

    common: np.ndarray
    own: np.ndarray
    others: np.ndarray


class Game:
    """Base class for a parametric common-coupled trajectory game.

    Joint actions are flat vectors of length ``n_agents * action_dim`` laid out
    agent-major.  Subclasses implement :meth:`stage_terms` and the three
    analytic derivative methods.
    """

    n_agents: int
    action_dim: int
    n_params: int
    grid: TimeGrid

    @property
    def n_actions(self) -> int:
        return self.n_agents * self.action_dim

    def agent_slice(self, i: int) -> slice:
        return slice(i * self.action_dim, (i + 1) * self.action_dim)

    def restricted(self, poly) -> "Game":
        """Game specialised to the subspace context carried by ``poly``."""
        return self

    # -- to be provided by subclasses ------------------------------------
    def stage_terms(self, theta, a) -> StageTerms:
        raise NotImplementedError

    def potential_gradient(self, theta, a) -> np.ndarray:
        raise NotImplementedError

    def potential_hessian(self, theta, a) -> np.ndarray:
        raise NotImplementedError

    def mixed_jacobian(self, theta, a) -> np.ndarray:
        raise NotImplementedError

    # -- generic ---------------------------------------------------------
    def _terms(self, theta, a) -> StageTerms:
        terms = self.stage_terms(np.asarray(theta, float), np.asarray(a, float))
        for arr in (terms.common, terms.own, terms.others):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteUtility("stage utility is not finite")
        return terms

    def utility(self, i: int, theta, a) -> float:
        terms = self._terms(theta, a)
        w = self.grid.weights()
        return float(w @ (terms.common + terms.own[i] + terms.others[i]))

    def potential(self, theta, a) -> float:
        terms = self._terms(theta, a)
        w = self.grid.weights()
        return float(w @ (terms.common + terms.own.sum(axis=0)))


def utility(game: Game, i: int, theta, a) -> float:
    return game.utility(i, theta, a)


def potential(game: Game, theta, a) -> float:
    return game.potential(theta, a)


def potential_gradient(game: Game, theta, a) -> np.ndarray:
    return game.potential_gradient(np.asarray(theta, float), np.asarray(a, float))


def potential_hessian(game: Game, theta, a) -> np.ndarray:
    return game.potential_hessian(np.asarray(theta, float), np.asarray(a, float))


def mixed_jacobian(game: Game, theta, a) -> np.ndarray:
    return game.mixed_jacobian(np.asarray(theta, float), np.asarray(a, float))


def check_potential_identity(game: Game, theta, a, i: int, a_i_prime, relative: bool = False) -> float:
    """|Δu^i − Δφ| for the unilateral deviation of agent ``i`` to ``a_i_prime``.

    With ``relative`` the result is divided by 1 + |Δu^i|.
    """
    a = np.asarray(a, float)
    b = a.copy()
    b[game.agent_slice(i)] = a_i_prime
    w = game.grid.weights()
    ta, tb = game._terms(theta, a), game._terms(theta, b)
    du = w @ (tb.common + tb.own[i] + tb.others[i]) - w @ (ta.common + ta.own[i] + ta.others[i])
    dphi = w @ (tb.common + tb.own.sum(axis=0)) - w @ (ta.common + ta.own.sum(axis=0))
    err = float(abs(du - dphi))
    return err / (1.0 + abs(float(du))) if relative else err


class QuadraticGame(Game):
    """Separable quadratic game: agent j's own terminal term is −s_j (a_j − θ_j)².

    One action coordinate and one parameter per agent.  The potential is
    −Σ_j s_j (a_j − θ_j)²; with a single agent and s=1 this is the textbook
    φ = −(a − θ)².
    """

    def __init__(self, scales=(1.0,), num_steps: int = 3):
        self.scales = np.asarray(scales, float)
        self.n_agents = len(self.scales)
        self.action_dim = 1
        self.n_params = self.n_agents
        self.grid = TimeGrid(num_steps, 1.0, MeasureKind.DIRAC_AT_T)

    def stage_terms(self, theta, a):
        n, S = self.n_agents, self.grid.n_stages
        own = np.zeros((n, S))
        own[:, -1] = -self.scales * (a - theta) ** 2
        return StageTerms(np.zeros(S), own, np.zeros((n, S)))

    def potential_gradient(self, theta, a):
        return -2.0 * self.scales * (a - theta)

    def potential_hessian(self, theta, a):
        return np.diag(-2.0 * self.scales)

    def mixed_jacobian(self, theta, a):
        return np.diag(2.0 * self.scales)


@dataclass(frozen=True)
class JointTrajectory:
    """Planar positions of every agent over stages 0..T plus the observed past.

    ``positions`` has shape (n, T+1, 2); ``past`` has shape (n, L, 2) and ends at
    the stage right before stage 0.
    """

    positions: np.ndarray
    past: np.ndarray
    dt: float

    def _extended(self) -> np.ndarray:
        past = np.asarray(self.past, float)
        if past.shape[1] == 0:
            raise ValueError("need at least one past position")
        if past.shape[1] == 1:
            # no velocity information: assume standstill before the window
            past = np.concatenate([past, past], axis=1)
        return np.concatenate([past[:, -2:], self.positions], axis=1)

    @property
    def augmented_states(self) -> np.ndarray:
        """(n, T+1, 3, 2): positions at t, t−1, t−2 for every stage t."""
        ext = self._extended()
        S = self.positions.shape[1]
        return np.stack([ext[:, 2:2 + S], ext[:, 1:1 + S], ext[:, 0:S]], axis=2)

    @property
    def velocity(self) -> np.ndarray:
        """(n, T+1, 2) first differences divided by dt."""
        ext = self._extended()
        return np.diff(ext, axis=1)[:, 1:] / self.dt

    @property
    def acceleration(self) -> np.ndarray:
        ext = self._extended()
        return np.diff(ext, n=2, axis=1) / self.dt ** 2

    def interpolate(self, t) -> np.ndarray:
        """Linear interpolation of positions at (fractional) stage ``t``."""
        S = self.positions.shape[1]
        grid = np.arange(S)
        out = np.empty((self.positions.shape[0], 2))
        for i in range(self.positions.shape[0]):
            for c in range(2):
                out[i, c] = np.interp(t, grid, self.positions[i, :, c])
        return out
