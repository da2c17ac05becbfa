"""Two pedestrians walking at constant speed along orthogonal paths.

Agent 1 walks along the y-axis, y¹_t = (0, t·a¹ + z¹); agent 2 along the
x-axis, y²_t = (t·a² + z², 0); both start before the crossing (z < 0) and
their actions are their speeds.  The game has a single terminal stage whose
common term penalises the closest L1 approach, weighted by the faster
agent's inverse speed, and own terms pulling each speed towards a desired
one.  Collapsing the max over time gives the closed form

    common = −θ_dist / |z² a¹ − z¹ a²|

so on each subspace where the sign of D = z² a¹ − z¹ a² is fixed, the
potential is smooth and strictly concave.

Parameter vector: θ = (θ_dist, θ_vel¹, θ_v¹, θ_vel², θ_v²).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..errors import NonFiniteUtility, NotIdentifiableHere
from ..game_core import Game, MeasureKind, StageTerms, TimeGrid
from ..solver import Polytope

DIST, VEL1, V1, VEL2, V2 = range(5)


@dataclass(frozen=True)
class PedestrianSetting:
    z1: float = -4.0
    z2: float = -5.0
    horizon: float = 10.0     # seconds until the terminal stage
    speed_cap: float = 3.0    # c
    eps: float = 0.1          # faster-by margin between the two speeds
    order_margin: float = 0.05  # keeps |z² a¹ − z¹ a²| away from 0 on a subspace

    def __post_init__(self):
        if not (self.z1 < 0 and self.z2 < 0):
            raise ValueError("start offsets must be negative")
        if not (self.eps > 0 and self.speed_cap > 0 and self.horizon > 0):
            raise ValueError("eps, speed_cap and horizon must be positive")
        if max(self.lower_bounds) >= self.speed_cap:
            raise ValueError("speed cap below the reach-the-crossing bound")

    @property
    def lower_bounds(self):
        # slowest speed that still reaches the crossing by the horizon
        return (-self.z1 / self.horizon, -self.z2 / self.horizon)

    @property
    def z(self):
        return np.array([self.z1, self.z2])


@dataclass(frozen=True)
class PedestrianParams:
    """Named view of the pedestrian parameter vector."""

    vel: tuple = (1.0, 1.0)
    v: tuple = (1.4, 1.1)
    dist: float = 1.0

    def __post_init__(self):
        if min(self.vel) <= 0:
            raise ValueError("velocity weights must be positive")
        if self.dist < 0:
            raise ValueError("distance weight must be nonnegative")

    def to_vector(self) -> np.ndarray:
        return np.array([self.dist, self.vel[0], self.v[0], self.vel[1], self.v[1]], float)

    @classmethod
    def from_vector(cls, theta) -> "PedestrianParams":
        t = np.asarray(theta, float)
        return cls(vel=(t[VEL1], t[VEL2]), v=(t[V1], t[V2]), dist=t[DIST])


@dataclass(frozen=True)
class PedestrianContext:
    sign: int          # sign of z² a¹ − z¹ a² on the subspace
    faster: int        # 0 or 1


def crossing_determinant(setting: PedestrianSetting, a) -> float:
    """D = z² a¹ − z¹ a²; negative iff agent 1 reaches the crossing first."""
    return setting.z2 * a[0] - setting.z1 * a[1]


class PedestrianGame(Game):
    n_agents = 2
    action_dim = 1
    n_params = 5

    def __init__(self, setting: PedestrianSetting, context: PedestrianContext | None = None):
        self.setting = setting
        self.context = context
        self.grid = TimeGrid(3, setting.horizon / 3, MeasureKind.DIRAC_AT_T)

    def restricted(self, poly):
        if isinstance(poly.context, PedestrianContext):
            return PedestrianGame(self.setting, poly.context)
        return self

    def _resolved(self, a):
        """Order-resolved positive denominator and its gradient wrt a."""
        D = crossing_determinant(self.setting, a)
        s = self.context.sign if self.context is not None else (1.0 if D >= 0 else -1.0)
        u = s * D
        du = s * np.array([self.setting.z2, -self.setting.z1])
        return u, du

    def stage_terms(self, theta, a):
        u, _ = self._resolved(a)
        S = self.grid.n_stages
        common = np.zeros(S)
        own = np.zeros((2, S))
        if theta[DIST] != 0.0:
            if u <= 0:
                raise NonFiniteUtility("pedestrians meet at the crossing (D' <= 0)")
            common[-1] = -theta[DIST] / u
        own[0, -1] = -theta[VEL1] * (a[0] - theta[V1]) ** 2
        own[1, -1] = -theta[VEL2] * (a[1] - theta[V2]) ** 2
        return StageTerms(common, own, np.zeros((2, S)))

    def potential_gradient(self, theta, a):
        u, du = self._resolved(a)
        g = np.array([-2 * theta[VEL1] * (a[0] - theta[V1]),
                      -2 * theta[VEL2] * (a[1] - theta[V2])])
        if theta[DIST] != 0.0:
            if u <= 0:
                raise NonFiniteUtility("D' <= 0")
            g = g + theta[DIST] * du / u ** 2
        return g

    def potential_hessian(self, theta, a):
        u, du = self._resolved(a)
        H = np.diag([-2 * theta[VEL1], -2 * theta[VEL2]])
        if theta[DIST] != 0.0:
            if u <= 0:
                raise NonFiniteUtility("D' <= 0")
            H = H - 2 * theta[DIST] / u ** 3 * np.outer(du, du)
        return H

    def mixed_jacobian(self, theta, a):
        u, du = self._resolved(a)
        J = np.zeros((2, 5))
        if u > 0:
            J[:, DIST] = du / u ** 2
        elif theta[DIST] != 0.0:
            raise NonFiniteUtility("D' <= 0")
        J[0, VEL1] = -2 * (a[0] - theta[V1])
        J[0, V1] = 2 * theta[VEL1]
        J[1, VEL2] = -2 * (a[1] - theta[V2])
        J[1, V2] = 2 * theta[VEL2]
        return J


def pedestrian_positions(setting: PedestrianSetting, a, t) -> tuple[np.ndarray, np.ndarray]:
    """Planar positions of both agents at times ``t`` (array)."""
    t = np.asarray(t, float)
    p1 = np.stack([np.zeros_like(t), t * a[0] + setting.z1], axis=-1)
    p2 = np.stack([t * a[1] + setting.z2, np.zeros_like(t)], axis=-1)
    return p1, p2


def pedestrian_potential(theta, a, setting: PedestrianSetting, context: PedestrianContext | None = None) -> float:
    return PedestrianGame(setting, context).potential(theta, a)


def action_box(setting: PedestrianSetting) -> Polytope:
    lo = setting.lower_bounds
    return Polytope.box(lo, [setting.speed_cap] * 2)


def _has_interior(poly: Polytope) -> bool:
    norms = np.linalg.norm(poly.G, axis=1)
    res = linprog([0, 0, -1], A_ub=np.hstack([poly.G, norms[:, None]]), b_ub=poly.b,
                  bounds=[(None, None)] * 2 + [(None, 1.0)], method="highs")
    return res.status == 0 and -res.fun > 1e-9


def enumerate_pedestrian_subspaces(setting: PedestrianSetting) -> list[Polytope]:
    """Split the action box by who is faster and who reaches the crossing first.

    Returns two or three polytopes; an order split is kept only when it has a
    nonempty interior inside the faster-agent region.
    """
    box = action_box(setting)
    z1, z2 = setting.z1, setting.z2
    out = []
    for faster in (0, 1):
        slower = 1 - faster
        # a_slower − a_faster <= −eps
        g = np.zeros(2)
        g[slower], g[faster] = 1.0, -1.0
        region = box.intersect(g, [-setting.eps])
        for sign in (-1, 1):
            # sign·D >= margin  <=>  −sign·(z² a¹ − z¹ a²) <= −margin
            row = -sign * np.array([z2, -z1])
            poly = region.intersect(row, [-setting.order_margin])
            if not _has_interior(poly):
                continue
            first = 0 if sign < 0 else 1
            poly.context = PedestrianContext(sign=sign, faster=faster)
            poly.description = f"agent {faster + 1} faster, agent {first + 1} first at crossing"
            out.append(poly)
    for k, poly in enumerate(out):
        poly.label = k
    return out


def invert_pedestrian_preferences(a, vel, setting: PedestrianSetting, dist: float = 1.0,
                                  poly: Polytope | None = None, slack_tol: float = 1e-7) -> np.ndarray:
    """Desired speeds (θ_v¹, θ_v²) that make ``a`` stationary for the potential.

    From ∂φ/∂a^i = 0 with the order-resolved denominator u = s·D:

        θ_v¹ = a¹ − θ_dist·s·z² / (2 θ_vel¹ u²)
        θ_v² = a² + θ_dist·s·z¹ / (2 θ_vel² u²)
    """
    a = np.asarray(a, float)
    vel = np.asarray(vel, float)
    if np.any(vel <= 0):
        raise ValueError("velocity weights must be positive")
    if poly is not None and np.min(poly.slacks(a)) <= slack_tol:
        raise NotIdentifiableHere("action lies on the subspace boundary")
    D = crossing_determinant(setting, a)
    if poly is not None and isinstance(poly.context, PedestrianContext):
        s = poly.context.sign
    else:
        s = 1.0 if D >= 0 else -1.0
    u = s * D
    if u <= 0:
        raise NotIdentifiableHere("action outside the smooth region")
    v1 = a[0] - dist * s * setting.z2 / (2 * vel[0] * u ** 2)
    v2 = a[1] + dist * s * setting.z1 / (2 * vel[1] * u ** 2)
    return np.array([v1, v2])
