"""The trajectory game learner: forward pass, two-phase training, evaluation.

Forward pass for one scene (past window of both cars):

    features -> refinement/weighting -> K̃, ŵ
             -> preference net      -> θ
             -> implicit layer: one potential maximisation per k in K̃
             -> modes ŷ_k = r(a*_k) with weights ŵ_k

Phase 1 fits the refinement nets by cross-entropy on the ground-truth
(order, merge step) cell.  Phase 2 freezes them and fits the preference net
and the shared distance weight by the horizon-averaged position MAE of the
mode in the labelled subspace, differentiating through the implicit layer.
"""
from __future__ import annotations

import copy
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .config import Config
from .errors import NoContainingSubspace, TrajGameError
from .implicit_layer import backward_boundary, backward_interior, fd_jacobian, forward
from .nets import (N_PSI, PreferenceNet, RefinementNet, RefinementOutput, psi_directions,
                   psi_to_theta, refinement_and_weighting, tgl_dp_clamp, theta_to_psi_grad)
from .scenarios.driving import (MERGER, OTHER, DrivingGame, ParamLayout, driving_subspace,
                                enumerate_driving_subspaces, subspace_cell, subspace_index,
                                subspace_label)
from .scenarios.geometry import RoadGeometry
from .solver import SolveReport, maximize_on_polytope

log = logging.getLogger(__name__)

WEIGHTS_VERSION = 1


# -- data ----------------------------------------------------------------------

@dataclass
class Scene:
    past: np.ndarray                 # (2, L, 2), merger first
    future: np.ndarray               # (2, S, 2), stages 0..T
    dt: float = 0.2
    source: str = "synthetic"
    scene_id: str = ""
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    label: Optional[int] = None      # generator subspace (synthetic scenes)
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        self.past = np.asarray(self.past, float)
        self.future = np.asarray(self.future, float)
        if self.past.ndim != 3 or self.past.shape[2] != 2 or self.past.shape[1] < 2:
            raise ValueError("past must have shape (n, L>=2, 2)")
        if self.future.ndim != 3 or self.future.shape[0] != self.past.shape[0] or self.future.shape[2] != 2:
            raise ValueError("future must have shape (n, S, 2)")
        if not (np.all(np.isfinite(self.past)) and np.all(np.isfinite(self.future))):
            raise ValueError("scene positions must be finite")

    @property
    def num_steps(self) -> int:
        return self.future.shape[1] - 1


def action_from_positions(positions) -> np.ndarray:
    """Flat driving action [x_0..x_T, y_0..y_T] per agent from (n, S, 2)."""
    P = np.asarray(positions, float)
    return np.transpose(P, (0, 2, 1)).reshape(-1)


def positions_from_action(a, n_agents: int = 2) -> np.ndarray:
    a = np.asarray(a, float)
    return np.transpose(a.reshape(n_agents, 2, -1), (0, 2, 1))


def last_velocity(past, dt: float) -> np.ndarray:
    """Longitudinal speed at the end of the past window, per agent."""
    past = np.asarray(past, float)
    return (past[:, -1, 0] - past[:, -2, 0]) / dt


def scene_features(past, dt: float) -> np.ndarray:
    """Fixed-length summary of the past window.

    Per agent: last position, last velocity (x, y) and mean longitudinal
    acceleration over the window; then gap and speed difference between the
    cars.  Standardisation happens in the learner.
    """
    past = np.asarray(past, float)
    L = past.shape[1]
    v = np.diff(past, axis=1) / dt
    acc = (v[:, -1, 0] - v[:, 0, 0]) / (max(L - 2, 1) * dt)
    feats = []
    for i in range(past.shape[0]):
        feats += [past[i, -1, 0], past[i, -1, 1], v[i, -1, 0], v[i, -1, 1], acc[i]]
    feats += [past[OTHER, -1, 0] - past[MERGER, -1, 0], v[OTHER, -1, 0] - v[MERGER, -1, 0]]
    return np.asarray(feats)


def constant_velocity_prediction(past, n_future: int, dt: float) -> np.ndarray:
    past = np.asarray(past, float)
    v = (past[:, -1] - past[:, -2]) / dt
    t = (np.arange(n_future) + 1) * dt
    return past[:, -1][:, None, :] + t[None, :, None] * v[:, None, :]


def scene_game(past, geometry: RoadGeometry, cfg: Config) -> DrivingGame:
    return DrivingGame(geometry, past, cfg.num_steps, cfg.dt, cfg.driving())


def scene_label(scene: Scene, cfg: Config) -> Optional[int]:
    """Subspace index of the ground-truth future, or None when unlabelable."""
    if scene.future.shape[1] != cfg.n_future:
        return None
    subs = enumerate_driving_subspaces(scene.geometry, scene.past, cfg.num_steps, cfg.driving())
    try:
        return subspace_label(action_from_positions(scene.future), subs, max_violation=cfg.label_tolerance)
    except NoContainingSubspace:
        return None


# -- learner weights -------------------------------------------------------------

@dataclass
class TglWeights:
    pref: PreferenceNet
    refine: RefinementNet
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def features(self, past, dt) -> np.ndarray:
        return (scene_features(past, dt) - self.feat_mean) / self.feat_std

    def copy(self) -> "TglWeights":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {"version": WEIGHTS_VERSION, "pref": self.pref.to_dict(), "refine": self.refine.to_dict(),
                "feat_mean": self.feat_mean.tolist(), "feat_std": self.feat_std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "TglWeights":
        if d.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weights version {d.get('version')}")
        return cls(PreferenceNet.from_dict(d["pref"]), RefinementNet.from_dict(d["refine"]),
                   np.asarray(d["feat_mean"], float), np.asarray(d["feat_std"], float))


def params_digest(nets) -> str:
    h = hashlib.sha256()
    for net in nets:
        for p in net.params:
            h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()


def init_weights(dataset, cfg: Config, rng=None, labels=None) -> TglWeights:
    """Fresh nets; feature scaling and the merge-step prior come from ``dataset``."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    F = np.array([scene_features(s.past, s.dt) for s in dataset])
    mean, std = F.mean(axis=0), F.std(axis=0)
    std = np.where(std > 1e-9, std, 1.0)
    steps = [subspace_cell(k)[0] for k in (labels or []) if k is not None]
    step_mean = float(np.mean(steps)) if steps else None
    step_scale = float(np.std(steps)) if len(steps) > 1 else None
    pref = PreferenceNet.init(F.shape[1], cfg.pref_hidden, rng, cfg.variant,
                              lo=cfg.tgl_d_lo, hi=cfg.tgl_d_hi)
    refine = RefinementNet.init(F.shape[1], cfg.num_steps, rng, cfg.order_hidden, cfg.time_hidden,
                                cfg.dropout, cfg.k_tilde, step_mean, step_scale)
    return TglWeights(pref, refine, mean, std)


# -- forward ---------------------------------------------------------------------

@dataclass
class Mode:
    positions: np.ndarray     # (n, S, 2)
    weight: float
    k: int
    report: SolveReport


@dataclass
class Prediction:
    modes: list
    most_likely: int          # position in ``modes``
    refinement: RefinementOutput
    theta: np.ndarray
    failed: dict = field(default_factory=dict)

    @property
    def best(self) -> Mode:
        return self.modes[self.most_likely]

    def to_dict(self) -> dict:
        return {
            "most_likely": self.most_likely,
            "modes": [{"k": m.k, "weight": m.weight, "description": _cell_text(m.k),
                       "positions": m.positions.tolist(), "status": m.report.status.value}
                      for m in self.modes],
            "theta": self.theta.tolist(),
            "failed": {str(k): v for k, v in self.failed.items()},
        }


def _cell_text(k: int) -> str:
    m, order = subspace_cell(k)
    return f"{'merger' if order == 0 else 'other'} first, merge step {m}"


def _theta(weights: TglWeights, feats, v_past, cfg: Config, merger_in_front: bool):
    """θ plus what the backward pass needs: (θ, aux, mask on dψ_v)."""
    psi, aux = weights.pref.forward(feats, v_past)
    mask = np.ones(psi.shape[0])
    if cfg.variant == "TGL-DP":
        old, want = v_past, psi[:, 0].copy()
        other, merger = tgl_dp_clamp(old[OTHER], old[MERGER], want[OTHER], want[MERGER],
                                     merger_in_front, cfg.big_change, cfg.small_change)
        psi[OTHER, 0], psi[MERGER, 0] = other, merger
        mask = (psi[:, 0] == want).astype(float)
    theta = psi_to_theta(psi, weights.pref.dist, cfg.n_future, cfg.terminal_vel_steps)
    return theta, aux, mask


def tgl_forward(past, weights: TglWeights, cfg: Config, geometry: RoadGeometry | None = None,
                k_tilde: int | None = None) -> Prediction:
    geometry = geometry or RoadGeometry()
    past = np.asarray(past, float)
    feats = weights.features(past, cfg.dt)
    ref, wgt = refinement_and_weighting(weights.refine, feats, k_tilde or cfg.k_tilde)
    merger_in_front = subspace_cell(ref.refined[0])[1] == 0
    theta, _, _ = _theta(weights, feats, last_velocity(past, cfg.dt), cfg, merger_in_front)
    game = scene_game(past, geometry, cfg)
    subs = {k: driving_subspace(geometry, past, cfg.num_steps, k, cfg.driving()) for k in ref.refined}
    res = forward(game, theta, [subs[k] for k in ref.refined], opts=cfg.solve_options())
    modes = []
    for j, k in enumerate(ref.refined):
        if j in res.reports:
            rep = res.reports[j]
            modes.append(Mode(positions_from_action(rep.argmax), float(wgt.weights[j]), k, rep))
    total = sum(m.weight for m in modes)
    for m in modes:
        m.weight = m.weight / total if total > 0 else 1.0 / len(modes)
    best = int(np.argmax([m.weight for m in modes]))
    failed = {ref.refined[j]: e for j, e in res.errors.items()}
    return Prediction(modes, best, ref, theta, failed)


# -- phase 1 -------------------------------------------------------------------------

class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.t)
            vh = v / (1 - self.b2 ** self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


def _split(n, frac, rng):
    perm = rng.permutation(n)
    n_val = int(round(frac * n)) if n >= 5 else 0
    return perm[n_val:], perm[:n_val]


def _refine_loss(net: RefinementNet, X, labels, train, rng):
    total, gsum = 0.0, None
    for x, k in zip(X, labels):
        m, order = subspace_cell(k)
        loss, _, go, gt = net.loss_and_grads(x, order, m, train, rng)
        total += loss
        g = go + gt
        gsum = g if gsum is None else [a + b for a, b in zip(gsum, g)]
    n = len(labels)
    return total / n, [g / n for g in gsum]


def refinement_accuracy(weights: TglWeights, dataset, labels, cfg: Config) -> dict:
    """Order accuracy, exact-cell accuracy and hit rate of the truth in K̃."""
    order_ok = cell_ok = hit = 0
    for s, k in zip(dataset, labels):
        ref, _ = refinement_and_weighting(weights.refine, weights.features(s.past, s.dt), cfg.k_tilde)
        best = ref.refined[0]
        order_ok += subspace_cell(best)[1] == subspace_cell(k)[1]
        cell_ok += best == k
        hit += k in ref.refined
    n = max(len(labels), 1)
    return {"order": order_ok / n, "cell": cell_ok / n, "in_refined": hit / n}


def _labelled(dataset, cfg, labels=None):
    if labels is None:
        labels = [scene_label(s, cfg) for s in dataset]
    keep = [(s, k) for s, k in zip(dataset, labels) if k is not None]
    if len(keep) < len(dataset):
        log.warning("skipping %d unlabelable scenes", len(dataset) - len(keep))
    return [s for s, _ in keep], [k for _, k in keep]


def train_refinement(dataset, weights: TglWeights, cfg: Config, rng=None, labels=None):
    """Phase 1: cross-entropy on (order, merge step) with validation early stopping.

    Returns (new weights, history).  The preference net is untouched.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    scenes, labels = _labelled(dataset, cfg, labels)
    if not scenes:
        raise TrajGameError("no labelable scenes for refinement training")
    log.info("label distribution: %s", dict(Counter(subspace_cell(k) for k in labels)))
    weights = weights.copy()
    net = weights.refine
    X = np.array([weights.features(s.past, s.dt) for s in scenes])
    tr, va = _split(len(scenes), cfg.val_fraction, rng)
    params = net.order.params + net.time.params
    opt = _Adam(params, cfg.refine_lr)
    best, best_params, bad, history = np.inf, [p.copy() for p in params], 0, []
    for epoch in range(cfg.refine_max_epochs):
        loss, grads = _refine_loss(net, X[tr], [labels[i] for i in tr], True, rng)
        opt.step(grads)
        if len(va):
            val, _ = _refine_loss(net, X[va], [labels[i] for i in va], False, None)
        else:
            val, _ = _refine_loss(net, X[tr], [labels[i] for i in tr], False, None)
        history.append({"epoch": epoch, "train_loss": loss, "val_loss": val})
        if val < best - 1e-9:
            best, bad = val, 0
            best_params = [p.copy() for p in params]
        else:
            bad += 1
            if bad >= cfg.refine_patience:
                break
    for p, b in zip(params, best_params):
        p[...] = b
    return weights, history


# -- phase 2 -------------------------------------------------------------------------

def mae_loss(positions, target):
    """Mean Euclidean position error and its gradient wrt ``positions``."""
    e = np.asarray(positions, float) - np.asarray(target, float)
    d = np.linalg.norm(e, axis=-1)
    n = d.size
    safe = np.where(d > 1e-12, d, 1.0)
    return float(d.mean()), np.where(d[..., None] > 1e-12, e / safe[..., None], 0.0) / n


@dataclass
class _SceneState:
    scene: Scene
    k: int
    poly: object
    game: DrivingGame
    feats: np.ndarray
    v_past: np.ndarray
    merger_in_front: bool
    warm: Optional[SolveReport] = None


def _scene_loss_grad(st: _SceneState, weights: TglWeights, cfg: Config, directions, want_grad=True):
    theta, aux, mask = _theta(weights, st.feats, st.v_past, cfg, st.merger_in_front)
    opts = cfg.solve_options()
    if st.warm is not None:
        rep = maximize_on_polytope(st.game, theta, st.poly, opts, start=st.warm.argmax,
                                   active_hint=list(st.warm.active_constraints))
    else:
        rep = maximize_on_polytope(st.game, theta, st.poly, opts)
    if not rep.converged:
        raise TrajGameError(f"scene {st.scene.scene_id}: solve status {rep.status.value}")
    st.warm = rep
    pos = positions_from_action(rep.argmax)
    loss, g_pos = mae_loss(pos, st.scene.future)
    if not want_grad:
        return loss, None, None, None
    g_a = action_from_positions(g_pos)
    g = st.game.restricted(st.poly)
    active = list(rep.active_constraints)
    method = "InteriorIFT"
    n_ag = st.scene.past.shape[0]
    if not active:
        g_theta = backward_interior(g, theta, rep.argmax).matrix.T @ g_a
    elif len(active) == 1 and rep.multipliers[active[0]] > cfg.lambda_tol:
        m = active[0]
        g_theta = backward_boundary(g, theta, rep.argmax, st.poly.G[m], float(rep.multipliers[m]),
                                    cfg.lambda_tol).matrix.T @ g_a
        method = "BoundaryKKT"
    else:
        g_theta = None
    if g_theta is not None:
        g_psi, g_dist = theta_to_psi_grad(g_theta, n_ag, cfg.n_future, cfg.terminal_vel_steps)
    elif cfg.corner_backward == "zero":
        g_psi, g_dist, method = np.zeros((n_ag, N_PSI)), 0.0, "Zero"
    else:
        # θ depends on (ψ, dist) linearly, so differences along those directions suffice
        Jd = fd_jacobian(st.game, theta, st.poly, opts=opts, base=rep, directions=directions)
        gd = Jd.T @ g_a
        g_psi, g_dist, method = gd[:-1].reshape(n_ag, N_PSI), float(gd[-1]), "FiniteDifference"
    g_psi = g_psi.copy()
    g_psi[:, 0] *= mask
    grads, g_dist_raw = weights.pref.backward(aux, g_psi, g_dist)
    return loss, grads, g_dist_raw, method


def _prepare(scenes, labels, weights, cfg) -> list:
    states = []
    for s, k in zip(scenes, labels):
        feats = weights.features(s.past, s.dt)
        ref, _ = refinement_and_weighting(weights.refine, feats, cfg.k_tilde)
        states.append(_SceneState(s, k, driving_subspace(s.geometry, s.past, cfg.num_steps, k, cfg.driving()),
                                  scene_game(s.past, s.geometry, cfg), feats,
                                  last_velocity(s.past, s.dt), subspace_cell(ref.refined[0])[1] == 0))
    return states


def _batch(states, weights, cfg, directions, want_grad=True):
    total, gsum, gd, methods = 0.0, None, 0.0, Counter()
    for st in states:
        loss, grads, g_dist, method = _scene_loss_grad(st, weights, cfg, directions, want_grad)
        total += loss
        if want_grad:
            methods[method] += 1
            gsum = grads if gsum is None else [a + b for a, b in zip(gsum, grads)]
            gd += g_dist
    n = len(states)
    if not want_grad:
        return total / n, None, None, methods
    return total / n, [g / n for g in gsum], gd / n, methods


def train_full(dataset, weights: TglWeights, cfg: Config, rng=None, labels=None, callback=None):
    """Phase 2: fit the preference net and the distance weight with the refinement frozen.

    Returns (new weights, history).  Raises if the refinement nets change.
    """
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    scenes, labels = _labelled(dataset, cfg, labels)
    if not scenes:
        raise TrajGameError("no labelable scenes for training")
    weights = weights.copy()
    frozen = params_digest([weights.refine.order, weights.refine.time])
    states = _prepare(scenes, labels, weights, cfg)
    tr, va = _split(len(states), cfg.val_fraction, rng)
    train_states = [states[i] for i in tr]
    val_states = [states[i] for i in va] or train_states
    directions = psi_directions(scenes[0].past.shape[0], cfg.n_future, cfg.terminal_vel_steps)
    pref = weights.pref
    params = pref.mlp.params
    history = []

    def snapshot():
        return [p.copy() for p in params], pref.dist_raw

    def restore(snap):
        for p, b in zip(params, snap[0]):
            p[...] = b
        pref.dist_raw = snap[1]

    if cfg.optimizer == "lbfgs":
        sizes = [p.size for p in params]

        def unpack(z):
            off = 0
            for p, n in zip(params, sizes):
                p[...] = z[off:off + n].reshape(p.shape)
                off += n
            pref.dist_raw = float(z[-1])

        def fun(z):
            unpack(z)
            loss, grads, gd, methods = _batch(train_states, weights, cfg, directions)
            history.append({"epoch": len(history), "train_loss": loss, "methods": dict(methods)})
            return loss, np.concatenate([g.ravel() for g in grads] + [[gd]])

        z0 = np.concatenate([p.ravel() for p in params] + [[pref.dist_raw]])
        res = minimize(fun, z0, jac=True, method="L-BFGS-B", options={"maxiter": cfg.max_epochs})
        unpack(res.x)
    else:
        vel = [np.zeros_like(p) for p in params]
        vd = 0.0
        best, best_snap, bad = np.inf, snapshot(), 0
        for epoch in range(cfg.max_epochs):
            loss, grads, gd, methods = _batch(train_states, weights, cfg, directions)
            for p, g, v in zip(params, grads, vel):
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
            vd = cfg.momentum * vd - cfg.lr * gd
            pref.dist_raw += vd
            val, _, _, _ = _batch(val_states, weights, cfg, directions, want_grad=False)
            history.append({"epoch": epoch, "train_loss": loss, "val_loss": val, "methods": dict(methods)})
            if callback is not None:
                callback(history[-1])
            if val < best - 1e-9:
                best, bad, best_snap = val, 0, snapshot()
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
        restore(best_snap)
    if params_digest([weights.refine.order, weights.refine.time]) != frozen:
        raise TrajGameError("refinement weights changed during phase-2 training")
    return weights, history


# -- evaluation ------------------------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    horizons: list               # seconds
    mae: list                    # per horizon
    rmse: list
    mae_avg: float
    rmse_avg: float
    n_scenes: int
    folds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"method": self.method, "horizons": self.horizons, "mae": self.mae, "rmse": self.rmse,
                "mae_avg": self.mae_avg, "rmse_avg": self.rmse_avg, "n_scenes": self.n_scenes,
                "folds": [f.to_dict() for f in self.folds]}


def metrics_from_errors(errors, dt: float, method: str) -> EvalReport:
    """``errors``: (scenes, agents, S) Euclidean position errors.

    Horizon h seconds reads stage h/dt − 1; the averages are the means of the
    per-horizon values, as in the published tables.
    """
    E = np.asarray(errors, float)
    S = E.shape[-1]
    horizons, mae, rmse = [], [], []
    h = 1
    while round(h / dt) - 1 < S:
        idx = int(round(h / dt)) - 1
        horizons.append(h)
        mae.append(float(E[..., idx].mean()))
        rmse.append(float(np.sqrt((E[..., idx] ** 2).mean())))
        h += 1
    return EvalReport(method, horizons, mae, rmse, float(np.mean(mae)), float(np.mean(rmse)), E.shape[0])


def evaluate(dataset, weights: TglWeights, cfg: Config, method: str | None = None) -> EvalReport:
    """Errors of the most likely mode on every scene."""
    if not dataset:
        raise TrajGameError("empty dataset")
    errs = []
    for s in dataset:
        pred = tgl_forward(s.past, weights, cfg, s.geometry)
        errs.append(np.linalg.norm(pred.best.positions - s.future, axis=-1))
    return metrics_from_errors(errs, cfg.dt, method or cfg.variant)


def evaluate_baseline(dataset, cfg: Config) -> EvalReport:
    if not dataset:
        raise TrajGameError("empty dataset")
    errs = [np.linalg.norm(constant_velocity_prediction(s.past, s.future.shape[1], s.dt) - s.future, axis=-1)
            for s in dataset]
    return metrics_from_errors(errs, cfg.dt, "CV")


def _mean_report(reports, method) -> EvalReport:
    return EvalReport(method, reports[0].horizons,
                      list(np.mean([r.mae for r in reports], axis=0)),
                      list(np.mean([r.rmse for r in reports], axis=0)),
                      float(np.mean([r.mae_avg for r in reports])),
                      float(np.mean([r.rmse_avg for r in reports])),
                      sum(r.n_scenes for r in reports), list(reports))


def fold_indices(n: int, folds: int, seed: int) -> list:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def fit(dataset, cfg: Config, rng=None, labels=None):
    """Both training phases from scratch.  Returns (weights, histories)."""
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    if labels is None:
        labels = [scene_label(s, cfg) for s in dataset]
    w = init_weights(dataset, cfg, rng, labels)
    w, h1 = train_refinement(dataset, w, cfg, rng, labels)
    w, h2 = train_full(dataset, w, cfg, rng, labels)
    return w, {"refinement": h1, "full": h2}


def cross_validate(dataset, cfg: Config) -> dict:
    """k-fold CV: per fold train both phases and evaluate; aggregate by mean."""
    if len(dataset) < cfg.folds:
        raise TrajGameError(f"need at least {cfg.folds} scenes for {cfg.folds}-fold CV")
    labels = [scene_label(s, cfg) for s in dataset]
    folds = fold_indices(len(dataset), cfg.folds, cfg.seed)
    tgl, cv = [], []
    for f, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(dataset)), val_idx)
        train = [dataset[i] for i in train_idx]
        val = [dataset[i] for i in val_idx]
        w, _ = fit(train, cfg, np.random.default_rng(cfg.seed + f), [labels[i] for i in train_idx])
        tgl.append(evaluate(val, w, cfg))
        cv.append(evaluate_baseline(val, cfg))
    return {cfg.variant: _mean_report(tgl, cfg.variant), "CV": _mean_report(cv, "CV")}


# -- synthetic data ------------------------------------------------------------------------

@dataclass
class SynthSampler:
    """Draws a past window first; the game parameters and the subspace follow from it.

    Both cars move at constant acceleration during the past.  The merger aims
    at ``merge_point``: the merge step is its projected arrival there, and the
    order is whoever is projected ahead at that moment.  θ_v adds
    ``accel_gain`` seconds of the past acceleration to the last speed; the
    remaining weights are fixed.
    """

    merger_x: tuple = (120.0, 190.0)
    merger_v: tuple = (18.0, 25.0)
    accel: tuple = (-0.6, 0.6)
    gap: tuple = (-35.0, 30.0)
    other_v: tuple = (19.0, 27.0)
    lateral: tuple = (-0.4, 0.4)
    merge_point: float = 235.0
    step_range: tuple = (4, 26)
    order_margin: float = 4.0
    accel_gain: float = 2.0
    dist: float = 1.0
    vel: float = 1.0
    cen: float = 1.0
    velw: float = 1.0
    acc: float = 1.0
    end: float = 1.0

    def sample_past(self, rng, geometry: RoadGeometry, window: int, dt: float):
        u = lambda r: rng.uniform(*r)
        xm, vm, am = u(self.merger_x), u(self.merger_v), u(self.accel)
        xo, vo, ao = xm + u(self.gap), u(self.other_v), u(self.accel)
        tau = (np.arange(window) - (window - 1)) * dt
        past = np.zeros((2, window, 2))
        # velocities given at the end of the window
        past[MERGER, :, 0] = xm + vm * tau + 0.5 * am * tau ** 2
        past[OTHER, :, 0] = xo + vo * tau + 0.5 * ao * tau ** 2
        past[MERGER, :, 1] = geometry.lanes[geometry.ramp_lane].center_y + u(self.lateral)
        past[OTHER, :, 1] = geometry.lanes[geometry.highway_lane].center_y + u(self.lateral)
        return past, (am, ao)

    def cell(self, past, accels, dt):
        v = last_velocity(past, dt)
        xm, xo = past[MERGER, -1, 0], past[OTHER, -1, 0]
        t_m = (self.merge_point - xm) / v[MERGER]
        m = int(round(t_m / dt)) - 1
        if not self.step_range[0] <= m <= self.step_range[1]:
            return None
        t = (m + 1) * dt
        lead = (xm + v[MERGER] * t + 0.5 * accels[0] * t ** 2) - (xo + v[OTHER] * t + 0.5 * accels[1] * t ** 2)
        if abs(lead) < self.order_margin:
            return None
        return m, 0 if lead > 0 else 1

    def theta(self, past, accels, dt, n_stages, terminal_vel_steps=6):
        v = last_velocity(past, dt)
        psi = np.zeros((2, N_PSI))
        psi[:, 0] = v + self.accel_gain * np.asarray(accels)
        psi[:, 1:] = [self.vel, self.cen, self.velw, self.acc, self.end]
        return psi_to_theta(psi, self.dist, n_stages, terminal_vel_steps)


def synth_generate(sampler: SynthSampler | None, geometry: RoadGeometry | None, n_scenes: int,
                   noise_std: float, rng, cfg: Config | None = None, max_tries: int = 50) -> list:
    """Scenes whose futures are equilibria of the game in a past-determined subspace."""
    sampler = sampler or SynthSampler()
    geometry = geometry or RoadGeometry()
    cfg = cfg or Config()
    rng = np.random.default_rng(rng)
    scenes = []
    tries = 0
    while len(scenes) < n_scenes:
        tries += 1
        if tries > max_tries * max(n_scenes, 1):
            raise TrajGameError("synthetic generator keeps failing; check sampler ranges")
        past, accels = sampler.sample_past(rng, geometry, cfg.past_window, cfg.dt)
        cell = sampler.cell(past, accels, cfg.dt)
        if cell is None:
            continue
        k = subspace_index(*cell)
        theta = sampler.theta(past, accels, cfg.dt, cfg.n_future, cfg.terminal_vel_steps)
        game = scene_game(past, geometry, cfg)
        poly = driving_subspace(geometry, past, cfg.num_steps, k, cfg.driving())
        try:
            rep = maximize_on_polytope(game, theta, poly, cfg.solve_options())
        except TrajGameError:
            continue
        if not rep.converged:
            continue
        future = positions_from_action(rep.argmax)
        if noise_std > 0:
            future = future + rng.normal(0.0, noise_std, future.shape)
        scenes.append(Scene(past, future, cfg.dt, "synthetic", f"synth-{len(scenes):04d}", geometry, k, theta))
    return scenes


# -- decision making ---------------------------------------------------------------------

@dataclass
class DecisionOutcome:
    k: int
    report: SolveReport
    positions: np.ndarray
    potential: float

    @property
    def description(self) -> str:
        return _cell_text(self.k)


def decision_transfer(past, theta, geometry: RoadGeometry | None, cfg: Config, ego: int = OTHER,
                      override_v: float | None = 0.0, refined=None):
    """Local NE of the game with the ego's desired speed overridden.

    Returns (outcomes sorted by potential, best first; failures by k).
    """
    geometry = geometry or RoadGeometry()
    theta = np.array(theta, float)
    game = scene_game(past, geometry, cfg)
    if override_v is not None:
        L = ParamLayout(game.n_agents, game.grid.n_stages)
        theta[L.v(ego)] = override_v
    subs = enumerate_driving_subspaces(geometry, past, cfg.num_steps, cfg.driving())
    idx = list(range(len(subs))) if refined is None else [int(k) for k in refined]
    res = forward(game, theta, subs, idx, cfg.solve_options(), workers=cfg.threads)
    out = [DecisionOutcome(subs[j].label, rep, positions_from_action(rep.argmax), rep.potential_value)
           for j, rep in res.reports.items()]
    out.sort(key=lambda o: -o.potential)
    return out, {subs[j].label: e for j, e in res.errors.items()}
