"""Multi-lane driver interaction on a straight road section.

Each agent's action is its sequence of planar positions (x_t, y_t), t=0..T,
laid out agent-major as [x_0..x_T, y_0..y_T].  The two positions preceding
stage 0 come from the observed past and anchor velocities and accelerations.

Stage utility of agent i (counting measure over t=0..T):

    − θ_dist Σ_{(b,f) same lane, b right behind f} 1 / (x^f_t − x^b_t + ζ)   (common)
    − θ_cen^i_t (y^i_t − c^i_t)²                                           (own)
    − θ_vel^i_t (δx^i_t − θ_v^i)²
    − θ_velw^i (δy^i_t)²
    − θ_acc^i (δ²x^i_t)²
    − θ_end^i softplus_β(x^i_t − e^i_t)           while i's lane ends at e
    − ε_r ((x^i_t − x^i_{−1})² + (y^i_t − y^i_{−1})²)                      (ridge)

The within-lane order is fixed by the subspace context, which turns the
absolute distance into a linear denominator; the lane-end kink is smoothed
with a softplus so the potential stays twice differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import InvalidAction, NoContainingSubspace, NonFiniteUtility
from ..game_core import Game, JointTrajectory, MeasureKind, StageTerms, TimeGrid
from ..solver import Polytope
from .geometry import RoadGeometry


@dataclass(frozen=True)
class DrivingConfig:
    zeta: float = 1.0
    softplus_beta: float = 20.0
    ridge: float = 1e-6
    ordering_gap: float = 0.5
    band_gap: float = 0.02
    terminal_vel_steps: int = 6


@dataclass(frozen=True)
class ParamLayout:
    """Index map of the driving parameter vector.

    [θ_dist, then per agent: θ_cen[0..T], θ_vel[0..T], θ_v, θ_velw, θ_acc, θ_end]
    """

    n_agents: int
    n_stages: int

    @property
    def per_agent(self) -> int:
        return 2 * self.n_stages + 4

    @property
    def size(self) -> int:
        return 1 + self.n_agents * self.per_agent

    dist = 0

    def base(self, i):
        return 1 + i * self.per_agent

    def cen(self, i):
        b = self.base(i)
        return slice(b, b + self.n_stages)

    def vel(self, i):
        b = self.base(i) + self.n_stages
        return slice(b, b + self.n_stages)

    def v(self, i):
        return self.base(i) + 2 * self.n_stages

    def velw(self, i):
        return self.v(i) + 1

    def acc(self, i):
        return self.v(i) + 2

    def end(self, i):
        return self.v(i) + 3


@dataclass
class DrivingParams:
    """Named view of the driving parameter vector θ."""

    dist: float
    cen: np.ndarray    # (n, T+1)
    vel: np.ndarray    # (n, T+1)
    v: np.ndarray      # (n,)
    velw: np.ndarray   # (n,)
    acc: np.ndarray    # (n,)
    end: np.ndarray    # (n,)

    def __post_init__(self):
        self.cen = np.asarray(self.cen, float)
        self.vel = np.asarray(self.vel, float)
        for name in ("v", "velw", "acc", "end"):
            setattr(self, name, np.asarray(getattr(self, name), float))

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout(*self.cen.shape)

    def validate(self, strict: bool = True) -> None:
        if self.dist < 0 or np.any(self.cen < 0) or np.any(self.vel < 0) or np.any(self.end < 0):
            raise ValueError("dist, cen, vel and end weights must be nonnegative")
        if strict and (np.any(self.velw <= 0) or np.any(self.acc <= 0)):
            raise ValueError("lateral-velocity and acceleration weights must be positive")

    def to_vector(self) -> np.ndarray:
        L = self.layout
        out = np.zeros(L.size)
        out[L.dist] = self.dist
        for i in range(L.n_agents):
            out[L.cen(i)] = self.cen[i]
            out[L.vel(i)] = self.vel[i]
            out[L.v(i)] = self.v[i]
            out[L.velw(i)] = self.velw[i]
            out[L.acc(i)] = self.acc[i]
            out[L.end(i)] = self.end[i]
        return out

    @classmethod
    def from_vector(cls, theta, n_agents: int, n_stages: int) -> "DrivingParams":
        L = ParamLayout(n_agents, n_stages)
        t = np.asarray(theta, float)
        rng = range(n_agents)
        return cls(
            dist=float(t[L.dist]),
            cen=np.array([t[L.cen(i)] for i in rng]),
            vel=np.array([t[L.vel(i)] for i in rng]),
            v=np.array([t[L.v(i)] for i in rng]),
            velw=np.array([t[L.velw(i)] for i in rng]),
            acc=np.array([t[L.acc(i)] for i in rng]),
            end=np.array([t[L.end(i)] for i in rng]),
        )

    @classmethod
    def terminal(cls, n_agents: int, num_steps: int, v, *, cen=1.0, vel=1.0, velw=1.0,
                 acc=1.0, end=1.0, dist=1.0, terminal_vel_steps: int = 6) -> "DrivingParams":
        """Terminal-cost preset: velocity weights only on the last stages, lane-center weight only at T."""
        S = num_steps + 1
        cen_w = np.zeros((n_agents, S))
        cen_w[:, -1] = np.broadcast_to(cen, n_agents)
        vel_w = np.zeros((n_agents, S))
        # nonzero for T−terminal_vel_steps < t <= T
        vel_w[:, S - terminal_vel_steps:] = np.asarray(np.broadcast_to(vel, n_agents))[:, None]
        bc = lambda x: np.array(np.broadcast_to(np.asarray(x, float), n_agents))
        return cls(dist, cen_w, vel_w, bc(v), bc(velw), bc(acc), bc(end))


@dataclass(frozen=True)
class DrivingContext:
    """Lane of every agent at every stage and the same-lane (behind, ahead) pairs."""

    lanes: np.ndarray                  # (n, T+1) lane indices
    pairs: tuple = field(default=())   # of (t, behind, ahead)

    def pair_arrays(self):
        if not self.pairs:
            e = np.zeros(0, int)
            return e, e, e
        p = np.asarray(self.pairs, int)
        return p[:, 0], p[:, 1], p[:, 2]


def context_from_positions(geometry: RoadGeometry, positions) -> DrivingContext:
    """Lanes by nearest lane center; order by x within each lane and stage."""
    positions = np.asarray(positions, float)
    n, S, _ = positions.shape
    centers = np.array([l.center_y for l in geometry.lanes])
    # argmin takes the first of equally close centers, as lane_of does
    lanes = np.argmin(np.abs(positions[..., 1, None] - centers), axis=-1)
    # per stage: agents sorted by lane, then x, then index (lexsort is stable)
    order = np.lexsort((positions[..., 0].T, lanes.T))          # (S, n)
    ln = np.take_along_axis(lanes.T, order, axis=1)
    t, j = np.nonzero(ln[:, 1:] == ln[:, :-1])
    pairs = list(zip(t.tolist(), order[t, j].tolist(), order[t, j + 1].tolist()))
    return DrivingContext(lanes, tuple(pairs))


def _diff_ops(S: int):
    D1 = np.eye(S) - np.eye(S, k=-1)
    D2 = np.eye(S) - 2 * np.eye(S, k=-1) + np.eye(S, k=-2)
    return D1, D2


def anchors(past) -> tuple[np.ndarray, np.ndarray]:
    """Positions at t=−1 and t=−2, shape (n, 2) each."""
    past = np.asarray(past, float)
    if past.ndim != 3 or past.shape[1] < 1:
        raise ValueError("past must have shape (n, L>=1, 2)")
    p1 = past[:, -1]
    p2 = past[:, -2] if past.shape[1] >= 2 else past[:, -1]
    return p1, p2


class DrivingGame(Game):
    def __init__(self, geometry: RoadGeometry, past, num_steps: int, dt: float = 0.2,
                 config: DrivingConfig | None = None, context: DrivingContext | None = None):
        self.geometry = geometry
        self.past = np.asarray(past, float)
        self.config = config or DrivingConfig()
        self.context = context
        self.grid = TimeGrid(num_steps, dt, MeasureKind.COUNTING)
        self.n_agents = self.past.shape[0]
        S = self.grid.n_stages
        self.action_dim = 2 * S
        self.layout = ParamLayout(self.n_agents, S)
        self.n_params = self.layout.size
        self.prev1, self.prev2 = anchors(self.past)
        self._D1, self._D2 = _diff_ops(S)
        self._cache = None

    def _params(self, theta, hessian: bool = False):
        """Parsed θ and, on request, the a-independent part of the Hessian; cached per θ."""
        theta = np.asarray(theta, float)
        key = theta.tobytes()
        cached = self._cache
        if cached is not None and cached[0] == key:
            P, H = cached[1], cached[2]
        else:
            P, H = DrivingParams.from_vector(theta, self.n_agents, self.grid.n_stages), None
        if hessian and H is None:
            H = self._quadratic_hessian(P)
        if cached is None or cached[0] != key or cached[2] is not H:
            # single attribute swap keeps the memo consistent across threads
            self._cache = (key, P, H)
        return P, H

    def _quadratic_hessian(self, P):
        dt, eps = self.grid.dt, self.config.ridge
        D1, D2 = self._D1, self._D2
        S = self.grid.n_stages
        H = np.zeros((self.n_actions, self.n_actions))
        I = np.eye(S)
        for i in range(self.n_agents):
            Hxx = -(2 / dt ** 2) * (D1.T * P.vel[i]) @ D1
            Hxx -= (2 * P.acc[i] / dt ** 4) * D2.T @ D2
            Hxx -= 2 * eps * I
            Hyy = -2 * np.diag(P.cen[i]) - (2 * P.velw[i] / dt ** 2) * D1.T @ D1 - 2 * eps * I
            ix, iy = self.ix(i), self.iy(i)
            H[np.ix_(ix, ix)] = Hxx
            H[np.ix_(iy, iy)] = Hyy
        return H

    def restricted(self, poly):
        if isinstance(poly.context, DrivingContext):
            return self.with_context(poly.context)
        return self

    def with_context(self, context):
        return DrivingGame(self.geometry, self.past, self.grid.num_steps, self.grid.dt,
                           self.config, context)

    # -- helpers --------------------------------------------------------
    def split(self, a):
        """(x, y), each (n, T+1), from a flat joint action."""
        S = self.grid.n_stages
        blocks = np.asarray(a, float).reshape(self.n_agents, 2, S)
        return blocks[:, 0], blocks[:, 1]

    def join(self, x, y) -> np.ndarray:
        return np.stack([x, y], axis=1).reshape(-1)

    def ix(self, i, t=slice(None)):
        S = self.grid.n_stages
        return np.arange(S)[t] + i * 2 * S

    def iy(self, i, t=slice(None)):
        S = self.grid.n_stages
        return np.arange(S)[t] + i * 2 * S + S

    def _context(self, x, y) -> DrivingContext:
        if self.context is not None:
            return self.context
        return context_from_positions(self.geometry, np.stack([x, y], axis=-1))

    def _lane_data(self, ctx):
        if ctx is self.context and getattr(self, "_lane_cache", None) is not None:
            return self._lane_cache
        centers = np.array([l.center_y for l in self.geometry.lanes])
        ends = np.array([np.nan if l.ends_at is None else l.ends_at for l in self.geometry.lanes])
        out = centers[ctx.lanes], ends[ctx.lanes]
        if ctx is self.context:
            self._lane_cache = out
        return out

    def _kinematics(self, x, y):
        dt = self.grid.dt
        S = self.grid.n_stages
        x1, y1 = self.prev1[:, 0], self.prev1[:, 1]
        x2 = self.prev2[:, 0]
        c1x = np.zeros((self.n_agents, S)); c1x[:, 0] = -x1
        c1y = np.zeros((self.n_agents, S)); c1y[:, 0] = -y1
        c2x = np.zeros((self.n_agents, S)); c2x[:, 0] = -2 * x1 + x2
        if S > 1:
            c2x[:, 1] = x1
        vx = (x @ self._D1.T + c1x) / dt
        vy = (y @ self._D1.T + c1y) / dt
        ax = (x @ self._D2.T + c2x) / dt ** 2
        return vx, vy, ax

    def _gaps(self, x, ctx, resolved: bool):
        t, b, f = ctx.pair_arrays()
        d = x[f, t] - x[b, t]
        if not resolved:
            d = np.abs(d)
        return t, b, f, d + self.config.zeta

    # -- stage terms ------------------------------------------------------
    def stage_terms(self, theta, a):
        P, _ = self._params(theta)
        x, y = self.split(a)
        ctx = self._context(x, y)
        n, S = x.shape
        cfg = self.config
        vx, vy, ax = self._kinematics(x, y)
        centers, ends = self._lane_data(ctx)

        common = np.zeros(S)
        t, b, f, u = self._gaps(x, ctx, resolved=self.context is not None)
        if t.size:
            if np.any(u <= 0):
                raise NonFiniteUtility("vehicles overlap: x_ahead − x_behind + zeta <= 0")
            np.add.at(common, t, -P.dist / u)

        own = -P.cen * (y - centers) ** 2
        own -= P.vel * (vx - P.v[:, None]) ** 2
        own -= P.velw[:, None] * vy ** 2
        own -= P.acc[:, None] * ax ** 2
        has_end = ~np.isnan(ends)
        z = np.where(has_end, x - np.nan_to_num(ends), 0.0)
        sp = np.logaddexp(0.0, cfg.softplus_beta * z) / cfg.softplus_beta
        own -= P.end[:, None] * np.where(has_end, sp, 0.0)
        own -= cfg.ridge * ((x - self.prev1[:, :1]) ** 2 + (y - self.prev1[:, 1:]) ** 2)
        return StageTerms(common, own, np.zeros((n, S)))

    # -- derivatives --------------------------------------------------------
    def _end_terms(self, x, ends):
        beta = self.config.softplus_beta
        has_end = ~np.isnan(ends)
        z = np.where(has_end, x - np.nan_to_num(ends), 0.0)
        sig = np.where(has_end, expit(beta * z), 0.0)
        dsig = np.where(has_end, beta * sig * (1 - sig), 0.0)
        return sig, dsig

    def _check_gaps(self, u):
        if np.any(u <= 0):
            raise NonFiniteUtility("vehicles overlap: x_ahead − x_behind + zeta <= 0")

    def potential_gradient(self, theta, a):
        P, _ = self._params(theta)
        x, y = self.split(a)
        ctx = self._context(x, y)
        dt, eps = self.grid.dt, self.config.ridge
        vx, vy, ax = self._kinematics(x, y)
        centers, ends = self._lane_data(ctx)
        sig, _ = self._end_terms(x, ends)
        D1, D2 = self._D1, self._D2

        gx = -(2 / dt) * (P.vel * (vx - P.v[:, None])) @ D1
        gx -= (2 / dt ** 2) * (P.acc[:, None] * ax) @ D2
        gx -= P.end[:, None] * sig
        gx -= 2 * eps * (x - self.prev1[:, :1])
        gy = -2 * P.cen * (y - centers)
        gy -= (2 / dt) * (P.velw[:, None] * vy) @ D1
        gy -= 2 * eps * (y - self.prev1[:, 1:])

        t, b, f, u = self._gaps(x, ctx, resolved=True)
        if t.size:
            self._check_gaps(u)
            w = P.dist / u ** 2
            np.add.at(gx, (f, t), w)
            np.add.at(gx, (b, t), -w)
        return self.join(gx, gy)

    def potential_hessian(self, theta, a):
        P, Hq = self._params(theta, hessian=True)
        x, y = self.split(a)
        ctx = self._context(x, y)
        centers, ends = self._lane_data(ctx)
        _, dsig = self._end_terms(x, ends)
        S = self.grid.n_stages
        H = Hq.copy()
        for i in range(self.n_agents):
            ix = self.ix(i)
            H[ix, ix] -= P.end[i] * dsig[i]

        t, b, f, u = self._gaps(x, ctx, resolved=True)
        if t.size:
            self._check_gaps(u)
            c = 2 * P.dist / u ** 3
            jf = f * 2 * S + t
            jb = b * 2 * S + t
            np.add.at(H, (jf, jf), -c)
            np.add.at(H, (jb, jb), -c)
            np.add.at(H, (jf, jb), c)
            np.add.at(H, (jb, jf), c)
        return H

    def mixed_jacobian(self, theta, a):
        P, _ = self._params(theta)
        L = self.layout
        x, y = self.split(a)
        ctx = self._context(x, y)
        dt = self.grid.dt
        vx, vy, ax = self._kinematics(x, y)
        centers, ends = self._lane_data(ctx)
        sig, _ = self._end_terms(x, ends)
        D1, D2 = self._D1, self._D2
        S = self.grid.n_stages
        J = np.zeros((self.n_actions, L.size))
        for i in range(self.n_agents):
            ix, iy = self.ix(i), self.iy(i)
            # ∂/∂θ_cen_t: only y_t
            J[iy, np.arange(L.cen(i).start, L.cen(i).stop)] = -2 * (y[i] - centers[i])
            # ∂/∂θ_vel_t: −(2/dt)(vx_t − v) D1[t, :]
            J[np.ix_(ix, np.arange(L.vel(i).start, L.vel(i).stop))] = \
                -(2 / dt) * D1.T * (vx[i] - P.v[i])[None, :]
            J[ix, L.v(i)] = (2 / dt) * D1.T @ P.vel[i]
            J[iy, L.velw(i)] = -(2 / dt) * D1.T @ vy[i]
            J[ix, L.acc(i)] = -(2 / dt ** 2) * D2.T @ ax[i]
            J[ix, L.end(i)] = -sig[i]
        t, b, f, u = self._gaps(x, ctx, resolved=True)
        if t.size:
            self._check_gaps(u)
            np.add.at(J[:, L.dist], f * 2 * S + t, 1 / u ** 2)
            np.add.at(J[:, L.dist], b * 2 * S + t, -1 / u ** 2)
        return J


def driving_parametrize(a, past, num_steps: int, dt: float = 0.2, tol: float = 1e-9) -> JointTrajectory:
    """Joint trajectory r(a) with state augmentation; rejects backward moves."""
    past = np.asarray(past, float)
    n = past.shape[0]
    S = num_steps + 1
    blocks = np.asarray(a, float).reshape(n, 2, S)
    positions = np.stack([blocks[:, 0], blocks[:, 1]], axis=-1)
    prev1, _ = anchors(past)
    xs = np.concatenate([prev1[:, :1], blocks[:, 0]], axis=1)
    if np.any(np.diff(xs, axis=1) < -tol):
        raise InvalidAction("backward move along the lane")
    return JointTrajectory(positions, past, dt)


def driving_stage_utility(i: int, theta, a, game: DrivingGame) -> np.ndarray:
    """Per-stage utility of agent i (length T+1)."""
    terms = game.stage_terms(np.asarray(theta, float), np.asarray(a, float))
    return terms.common + terms.own[i] + terms.others[i]


# -- two-car merge subspaces ----------------------------------------------

MERGER, OTHER = 0, 1
ORDERS = ("merger_first", "other_first")


def subspace_index(merge_step: int, order: int) -> int:
    return 2 * (merge_step - 1) + order


def subspace_cell(k: int) -> tuple[int, int]:
    """(merge_step, order) of subspace index k."""
    return k // 2 + 1, k % 2


def merge_context(geometry: RoadGeometry, num_steps: int, merge_step: int, order: int) -> DrivingContext:
    S = num_steps + 1
    lanes = np.empty((2, S), int)
    lanes[OTHER] = geometry.highway_lane
    lanes[MERGER, :merge_step] = geometry.ramp_lane
    lanes[MERGER, merge_step:] = geometry.highway_lane
    ahead, behind = (MERGER, OTHER) if order == 0 else (OTHER, MERGER)
    pairs = tuple((t, behind, ahead) for t in range(merge_step, S))
    return DrivingContext(lanes, pairs)


def enumerate_driving_subspaces(geometry: RoadGeometry, past, num_steps: int,
                                config: DrivingConfig | None = None,
                                scene_kind: str = "TwoCarMerge", cells=None) -> list[Polytope]:
    """One polytope per (merge step m in 1..T−1) × (merger first / other first).

    With ``scene_kind="Following"`` both cars stay in the highway lane and
    there are two subspaces, one per order.

    Agent 0 is the merger (on-ramp), agent 1 the highway car.  Constraints:
    road box in x, lane bands in y per stage, no backward moves (anchored at
    the last past position) and, from the merge step on, an ordering gap.
    ``cells`` optionally restricts the output to the given (m, order) pairs.
    """
    if scene_kind not in ("TwoCarMerge", "Following"):
        raise ValueError(f"unsupported scene kind {scene_kind}")
    cfg = config or DrivingConfig()
    past = np.asarray(past, float)
    if past.shape[0] != 2:
        raise ValueError("the merge scene has exactly two agents")
    S = num_steps + 1
    N = 2 * 2 * S
    prev1, _ = anchors(past)
    xb, xc = geometry.x_range

    def xi(i, t):
        return i * 2 * S + t

    def yi(i, t):
        return i * 2 * S + S + t

    base_rows, base_b = [], []

    def add(coeffs, rhs, rows, bs):
        g = np.zeros(N)
        for j, c in coeffs:
            g[j] += c
        rows.append(g)
        bs.append(rhs)

    for i in range(2):
        for t in range(S):
            add([(xi(i, t), 1.0)], xc, base_rows, base_b)
            add([(xi(i, t), -1.0)], -xb, base_rows, base_b)
        add([(xi(i, 0), -1.0)], -prev1[i, 0], base_rows, base_b)
        for t in range(1, S):
            add([(xi(i, t - 1), 1.0), (xi(i, t), -1.0)], 0.0, base_rows, base_b)
    hw = geometry.band(geometry.highway_lane, cfg.band_gap)
    ramp = geometry.band(geometry.ramp_lane, cfg.band_gap)
    for t in range(S):
        add([(yi(OTHER, t), 1.0)], hw[1], base_rows, base_b)
        add([(yi(OTHER, t), -1.0)], -hw[0], base_rows, base_b)

    if scene_kind == "Following":
        return _following_subspaces(geometry, num_steps, cfg, base_rows, base_b, add, yi, xi)

    wanted = None if cells is None else {(int(m), int(o)) for m, o in cells}
    out = []
    for m in range(1, num_steps):
        if wanted is not None and not any(c[0] == m for c in wanted):
            continue
        band_rows, band_b = [], []
        for t in range(S):
            lo, hi = ramp if t < m else hw
            add([(yi(MERGER, t), 1.0)], hi, band_rows, band_b)
            add([(yi(MERGER, t), -1.0)], -lo, band_rows, band_b)
        for order in (0, 1):
            if wanted is not None and (m, order) not in wanted:
                continue
            ahead, behind = (MERGER, OTHER) if order == 0 else (OTHER, MERGER)
            rows, bs = list(base_rows) + band_rows, list(base_b) + band_b
            for t in range(m, S):
                add([(xi(behind, t), 1.0), (xi(ahead, t), -1.0)], -cfg.ordering_gap, rows, bs)
            k = subspace_index(m, order)
            out.append(Polytope(
                np.array(rows), np.array(bs), label=k,
                description=f"{ORDERS[order].replace('_', ' ')}, merge step {m}",
                context=merge_context(geometry, num_steps, m, order),
            ))
    return out


def _following_subspaces(geometry, num_steps, cfg, base_rows, base_b, add, yi, xi):
    """Both cars in the highway lane throughout; one subspace per order (label 0: agent 0 ahead)."""
    S = num_steps + 1
    hw = geometry.band(geometry.highway_lane, cfg.band_gap)
    lanes = np.full((2, S), geometry.highway_lane, int)
    out = []
    for order in (0, 1):
        ahead, behind = (0, 1) if order == 0 else (1, 0)
        rows, bs = list(base_rows), list(base_b)
        for t in range(S):
            add([(yi(0, t), 1.0)], hw[1], rows, bs)
            add([(yi(0, t), -1.0)], -hw[0], rows, bs)
            add([(xi(behind, t), 1.0), (xi(ahead, t), -1.0)], -cfg.ordering_gap, rows, bs)
        ctx = DrivingContext(lanes, tuple((t, behind, ahead) for t in range(S)))
        out.append(Polytope(np.array(rows), np.array(bs), label=order,
                            description=f"car {ahead} ahead", context=ctx))
    return out


def driving_subspace(geometry: RoadGeometry, past, num_steps: int, k: int,
                     config: DrivingConfig | None = None) -> Polytope:
    """The single merge subspace with index ``k``."""
    m, order = subspace_cell(k)
    if not 1 <= m < num_steps:
        raise ValueError(f"subspace index {k} out of range")
    return enumerate_driving_subspaces(geometry, past, num_steps, config, cells=[(m, order)])[0]


def subspace_label(a, subspaces, tol: float = 1e-6, max_violation: float | None = None) -> int:
    """Index (label) of the subspace containing the joint action ``a``.

    Among subspaces whose total violation is within ``tol`` (or, if none,
    within ``max_violation`` when given), the one with the smallest violation
    wins; ties go to the lowest label.
    """
    a = np.asarray(a, float)
    viol = np.array([p.violation(a) for p in subspaces])
    labels = np.array([p.label for p in subspaces])
    limit = tol
    if not np.any(viol <= tol):
        if max_violation is None or not np.any(viol <= max_violation):
            raise NoContainingSubspace(f"closest subspace violates by {viol.min():.3g}")
        limit = max_violation
    cand = np.flatnonzero(viol <= limit)
    best = min(cand, key=lambda j: (viol[j], labels[j]))
    return int(labels[best])
