"""Small numpy feed-forward nets with exact backprop, plus the learner heads.

Three nets make up the learner:

* preference net: past features -> per-scene game parameters ψ
  (per agent: desired speed, terminal speed weight, terminal lane-center
  weight, lateral weight, acceleration weight, lane-end weight); the shared
  distance weight is a separately trained scalar.
* order net: past features -> P(merger first), P(other first).
* time net: past features -> mean and log-std of a Gaussian over the merge
  step, discretised per step cell and truncated to 1..T-1.

The compact vector ψ is mapped linearly onto the full driving parameter vector
by :func:`psi_to_theta` using the terminal-cost pattern.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr

from .scenarios.driving import ParamLayout

HEADS = ("linear", "softmax", "sigmoid")


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, float)
    return y + np.log(-np.expm1(-y))


@dataclass
class Mlp:
    sizes: list
    W: list
    b: list
    head: str = "linear"
    dropout: float = 0.0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            if W.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} has inconsistent shapes")

    @classmethod
    def init(cls, sizes, rng=None, head="linear", dropout=0.0) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(rng)
        W, b = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            r = np.sqrt(6.0 / (fan_in + fan_out))
            W.append(rng.uniform(-r, r, (fan_in, fan_out)))
            b.append(np.zeros(fan_out))
        return cls(list(sizes), W, b, head, dropout)

    @property
    def params(self) -> list:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def copy(self) -> "Mlp":
        return Mlp(list(self.sizes), [w.copy() for w in self.W], [v.copy() for v in self.b],
                   self.head, self.dropout)

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "head": self.head, "dropout": self.dropout,
                "W": [w.tolist() for w in self.W], "b": [v.tolist() for v in self.b]}

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(list(d["sizes"]), [np.asarray(w, float).reshape(d["sizes"][k], d["sizes"][k + 1])
                                      for k, w in enumerate(d["W"])],
                   [np.asarray(v, float) for v in d["b"]], d["head"], float(d["dropout"]))


@dataclass
class MlpCache:
    x: np.ndarray
    hidden: list           # post-activation (after dropout) of each hidden layer
    masks: list            # dropout multipliers, None in eval mode
    z_out: np.ndarray      # output pre-activation
    out: np.ndarray
    squeeze: bool


def mlp_forward(net: Mlp, x, train: bool = False, rng=None):
    """Returns (output, cache).  Accepts one input vector or a batch (B, d)."""
    x = np.asarray(x, float)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.shape[1] != net.sizes[0]:
        raise ValueError(f"input width {X.shape[1]} != {net.sizes[0]}")
    use_dropout = train and net.dropout > 0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    h = X
    hidden, masks = [], []
    for k in range(len(net.W) - 1):
        h = np.tanh(h @ net.W[k] + net.b[k])
        if use_dropout:
            keep = 1.0 - net.dropout
            m = (rng.random(h.shape) < keep) / keep
            h = h * m
            masks.append(m)
        else:
            masks.append(None)
        hidden.append(h)
    z = h @ net.W[-1] + net.b[-1]
    if net.head == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        out = e / e.sum(axis=1, keepdims=True)
    elif net.head == "sigmoid":
        out = expit(z)
    else:
        out = z
    cache = MlpCache(X, hidden, masks, z, out, squeeze)
    return (out[0] if squeeze else out), cache


def mlp_backward(net: Mlp, cache: MlpCache | None, g_out, wrt_logits: bool = False):
    """Reverse pass of :func:`mlp_forward`.

    ``g_out`` is dL/d(output), or dL/d(pre-activation) with ``wrt_logits``.
    Returns (grads, g_in) with grads aligned to ``net.params``.
    """
    if cache is None:
        raise ValueError("mlp_backward needs the cache of a forward pass")
    g = np.asarray(g_out, float)
    if g.ndim == 1:
        g = g[None, :]
    if not wrt_logits:
        if net.head == "softmax":
            p = cache.out
            g = p * (g - (g * p).sum(axis=1, keepdims=True))
        elif net.head == "sigmoid":
            g = g * cache.out * (1.0 - cache.out)
    grads = [None] * (2 * len(net.W))
    for k in range(len(net.W) - 1, -1, -1):
        inp = cache.hidden[k - 1] if k > 0 else cache.x
        grads[2 * k] = inp.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.W[k].T
        if k > 0:
            if cache.masks[k - 1] is not None:
                # hidden holds tanh·mask; recover tanh for the derivative
                m = cache.masks[k - 1]
                t = np.divide(cache.hidden[k - 1], m, out=np.zeros_like(m), where=m != 0)
                g = g * m * (1.0 - t ** 2)
            else:
                g = g * (1.0 - cache.hidden[k - 1] ** 2)
    g_in = g[0] if cache.squeeze else g
    return grads, g_in


# -- game-parameter heads ---------------------------------------------------

PSI_FIELDS = ("v", "vel", "cen", "velw", "acc", "end")
N_PSI = len(PSI_FIELDS)


def tgl_d_head(raw, v_past, lo: float = 0.6, hi: float = 1.4):
    """θ_v = v_past·(lo + (hi−lo)·σ(raw)); returns (θ_v, dθ_v/draw)."""
    s = expit(np.asarray(raw, float))
    v_past = np.asarray(v_past, float)
    return v_past * (lo + (hi - lo) * s), v_past * (hi - lo) * s * (1 - s)


def _clamp(z, lo, hi):
    return max(lo, min(z, hi))


def tgl_dp_clamp(old_vx_other, old_vx_merger, desired_vx_other, desired_vx_merger,
                 merger_in_front: bool, big_change: float = 1.2, small_change: float = 1.04):
    """Clip net desired speeds to what the past velocities and the refined order suggest.

    Returns (new_vx_other, new_vx_merger).
    """
    if not merger_in_front:
        new_other = _clamp(desired_vx_other, old_vx_other / small_change, old_vx_other * small_change)
        # only accelerating merger, bounded change
        new_merger = _clamp(desired_vx_merger, old_vx_merger, old_vx_merger * big_change)
    else:
        new_merger = _clamp(desired_vx_merger, min(old_vx_merger * big_change, old_vx_other / big_change),
                            old_vx_merger * big_change)
        if new_merger > old_vx_other:
            new_other = _clamp(desired_vx_other, old_vx_other / small_change, old_vx_other * small_change)
        else:
            new_other = _clamp(desired_vx_other, old_vx_other / big_change, old_vx_other)
    return new_other, new_merger


def psi_to_theta(psi, dist: float, n_stages: int, terminal_vel_steps: int = 6) -> np.ndarray:
    """Full driving θ from ψ (n_agents, 6) under the terminal-cost pattern."""
    psi = np.asarray(psi, float)
    L = ParamLayout(psi.shape[0], n_stages)
    theta = np.zeros(L.size)
    theta[L.dist] = dist
    for i in range(psi.shape[0]):
        v, vel, cen, velw, acc, end = psi[i]
        theta[L.cen(i).stop - 1] = cen
        vs = L.vel(i)
        theta[vs.stop - terminal_vel_steps:vs.stop] = vel
        theta[L.v(i)] = v
        theta[L.velw(i)] = velw
        theta[L.acc(i)] = acc
        theta[L.end(i)] = end
    return theta


def theta_to_psi_grad(g_theta, n_agents: int, n_stages: int, terminal_vel_steps: int = 6):
    """Pull dL/dθ back to (dL/dψ (n_agents, 6), dL/d dist)."""
    g = np.asarray(g_theta, float)
    L = ParamLayout(n_agents, n_stages)
    out = np.zeros((n_agents, N_PSI))
    for i in range(n_agents):
        vs = L.vel(i)
        out[i] = [g[L.v(i)], g[vs.stop - terminal_vel_steps:vs.stop].sum(), g[L.cen(i).stop - 1],
                  g[L.velw(i)], g[L.acc(i)], g[L.end(i)]]
    return out, float(g[L.dist])


def psi_directions(n_agents: int, n_stages: int, terminal_vel_steps: int = 6) -> np.ndarray:
    """Columns dθ/dψ_j (and dθ/d dist last); θ is linear in (ψ, dist)."""
    cols = []
    for i in range(n_agents):
        for j in range(N_PSI):
            psi = np.zeros((n_agents, N_PSI))
            psi[i, j] = 1.0
            cols.append(psi_to_theta(psi, 0.0, n_stages, terminal_vel_steps))
    cols.append(psi_to_theta(np.zeros((n_agents, N_PSI)), 1.0, n_stages, terminal_vel_steps))
    return np.stack(cols, axis=1)


@dataclass
class PreferenceNet:
    """Past features -> ψ.  Variant TGL uses a residual speed head
    θ_v = v_past + v_scale·raw; TGL-D and TGL-DP use :func:`tgl_d_head`."""

    mlp: Mlp
    dist_raw: float = float(inv_softplus(1.0))
    variant: str = "TGL"
    n_agents: int = 2
    v_scale: float = 2.0
    lo: float = 0.6
    hi: float = 1.4

    @classmethod
    def init(cls, n_features, hidden=(16, 24), rng=None, variant="TGL", prior=None,
             n_agents=2, dist=1.0, lo=0.6, hi=1.4) -> "PreferenceNet":
        """Biases chosen so that a zero-input net emits θ_v = v_past and the weight prior."""
        mlp = Mlp.init([n_features, *hidden, n_agents * N_PSI], rng)
        prior = {"vel": 1.0, "cen": 1.0, "velw": 1.0, "acc": 1.0, "end": 1.0, **(prior or {})}
        b = np.zeros((n_agents, N_PSI))
        for j, name in enumerate(PSI_FIELDS[1:], start=1):
            b[:, j] = inv_softplus(prior[name])
        if variant in ("TGL-D", "TGL-DP"):
            # σ(raw) = (1 − lo)/(hi − lo) gives θ_v = v_past
            b[:, 0] = np.log((1 - lo) / (hi - 1))
        mlp.b[-1] = b.ravel()
        # small last layer so the prior dominates at the start
        mlp.W[-1] *= 0.1
        return cls(mlp, float(inv_softplus(dist)), variant, n_agents, lo=lo, hi=hi)

    @property
    def dist(self) -> float:
        return float(softplus(self.dist_raw))

    def forward(self, features, v_past, train=False, rng=None):
        raw, cache = mlp_forward(self.mlp, features, train, rng)
        R = raw.reshape(self.n_agents, N_PSI)
        psi = np.empty_like(R)
        dpsi = np.empty_like(R)
        if self.variant == "TGL":
            psi[:, 0] = np.asarray(v_past, float) + self.v_scale * R[:, 0]
            dpsi[:, 0] = self.v_scale
        else:
            psi[:, 0], dpsi[:, 0] = tgl_d_head(R[:, 0], v_past, self.lo, self.hi)
        psi[:, 1:] = softplus(R[:, 1:])
        dpsi[:, 1:] = expit(R[:, 1:])
        return psi, (cache, dpsi)

    def backward(self, aux, g_psi, g_dist: float):
        """Gradients wrt (mlp params list, dist_raw)."""
        cache, dpsi = aux
        g_raw = (np.asarray(g_psi) * dpsi).ravel()
        grads, _ = mlp_backward(self.mlp, cache, g_raw)
        return grads, g_dist * float(expit(self.dist_raw))

    def to_dict(self):
        return {"mlp": self.mlp.to_dict(), "dist_raw": self.dist_raw, "variant": self.variant,
                "n_agents": self.n_agents, "v_scale": self.v_scale, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["mlp"]), float(d["dist_raw"]), d["variant"], int(d["n_agents"]),
                   float(d["v_scale"]), float(d["lo"]), float(d["hi"]))


def preference_revelation(net: PreferenceNet, features, v_past, n_stages: int,
                          terminal_vel_steps: int = 6) -> np.ndarray:
    psi, _ = net.forward(features, v_past)
    return psi_to_theta(psi, net.dist, n_stages, terminal_vel_steps)


# -- refinement / weighting ---------------------------------------------------

@dataclass
class RefinementOutput:
    refined: list                 # subspace indices K̃, best first
    order_probs: np.ndarray       # (P(merger first), P(other first))
    step_mean: float
    step_std: float
    step_probs: np.ndarray        # mass over merge steps 1..T−1

    def multi_hot(self, n_subspaces: int) -> np.ndarray:
        v = np.zeros(n_subspaces, bool)
        v[self.refined] = True
        return v


@dataclass
class WeightingOutput:
    weights: np.ndarray           # ŵ aligned with RefinementOutput.refined


def _log_cell_mass(hi, lo):
    """Stable log(Φ(hi) − Φ(lo)) for hi > lo, elementwise."""
    with np.errstate(divide="ignore"):
        la, lb = log_ndtr(hi), log_ndtr(lo)
        out = la + np.log1p(-np.exp(np.minimum(lb - la, -1e-300)))
        # upper tail: use the mirrored form for accuracy
        up = lo > 0
        lu, lv = log_ndtr(-lo[up]), log_ndtr(-hi[up])
        out[up] = lu + np.log1p(-np.exp(np.minimum(lv - lu, -1e-300)))
    return out


def step_distribution(mean: float, std: float, n_steps: int):
    """Truncated discretised Gaussian over steps 1..n_steps: (probs, log_probs)."""
    m = np.arange(1, n_steps + 1)
    logmass = _log_cell_mass((m + 0.5 - mean) / std, (m - 0.5 - mean) / std)
    logp = logmass - np.logaddexp.reduce(logmass)
    return np.exp(logp), logp


def _step_logp_grad(mean, std, n_steps, target, eps=1e-6):
    """Smoothed log q(target) = log((1−ε)q + ε/n) and its derivatives wrt (mean, std)."""
    def dlog(hi, lo):
        # d/dmean and d/dstd of log(Φ(hi) − Φ(lo)) with z = (c − mean)/std
        lm = _log_cell_mass(np.array([hi]), np.array([lo]))[0]
        ph = np.exp(-0.5 * hi ** 2 - lm) / np.sqrt(2 * np.pi)
        pl = np.exp(-0.5 * lo ** 2 - lm) / np.sqrt(2 * np.pi)
        return (pl - ph) / std, (pl * lo - ph * hi) / std

    q, logp = step_distribution(mean, std, n_steps)
    z = lambda c: (c - mean) / std
    dm_t, ds_t = dlog(z(target + 0.5), z(target - 0.5))
    dm_z, ds_z = dlog(z(n_steps + 0.5), z(0.5))
    p = q[target - 1]
    val = np.log((1 - eps) * p + eps / n_steps)
    r = (1 - eps) * p / ((1 - eps) * p + eps / n_steps)
    return val, r * (dm_t - dm_z), r * (ds_t - ds_z)


@dataclass
class RefinementNet:
    order: Mlp
    time: Mlp
    n_steps: int                   # T − 1 merge steps
    mean0: float = 0.0
    scale: float = 1.0
    k_tilde: int = 4

    @classmethod
    def init(cls, n_features, num_steps, rng=None, order_hidden=(16, 4), time_hidden=(64, 32),
             dropout=0.6, k_tilde=4, step_mean=None, step_scale=None) -> "RefinementNet":
        rng = np.random.default_rng(rng)
        order = Mlp.init([n_features, *order_hidden, 2], rng, "softmax", dropout)
        time = Mlp.init([n_features, *time_hidden, 2], rng, "linear", dropout)
        n_steps = num_steps - 1
        mean0 = (n_steps + 1) / 2 if step_mean is None else float(step_mean)
        scale = max(n_steps / 4, 1.0) if step_scale is None else max(float(step_scale), 1.0)
        return cls(order, time, n_steps, mean0, scale, k_tilde)

    def gaussian(self, raw):
        return self.mean0 + self.scale * raw[0], self.scale * np.exp(raw[1])

    def forward(self, features, train=False, rng=None):
        p, oc = mlp_forward(self.order, features, train, rng)
        raw, tc = mlp_forward(self.time, features, train, rng)
        mean, std = self.gaussian(raw)
        return p, mean, std, (oc, tc, raw)

    def loss_and_grads(self, features, order_label: int, step_label: int, train=True, rng=None):
        """Cross-entropy of the (order, merge step) label and its gradients."""
        p, mean, std, (oc, tc, raw) = self.forward(features, train, rng)
        lo = -np.log(max(p[order_label], 1e-300))
        g_logits = p.copy()
        g_logits[order_label] -= 1.0
        go, _ = mlp_backward(self.order, oc, g_logits, wrt_logits=True)
        lq, dmu, dsd = _step_logp_grad(mean, std, self.n_steps, step_label)
        g_raw = -np.array([dmu * self.scale, dsd * std])
        gt, _ = mlp_backward(self.time, tc, g_raw)
        return lo - lq, (lo, -lq), go, gt

    def to_dict(self):
        return {"order": self.order.to_dict(), "time": self.time.to_dict(), "n_steps": self.n_steps,
                "mean0": self.mean0, "scale": self.scale, "k_tilde": self.k_tilde}

    @classmethod
    def from_dict(cls, d):
        return cls(Mlp.from_dict(d["order"]), Mlp.from_dict(d["time"]), int(d["n_steps"]),
                   float(d["mean0"]), float(d["scale"]), int(d["k_tilde"]))


def refinement_and_weighting(net: RefinementNet, features, k_tilde: int | None = None):
    """Top-k̃ (order, merge step) cells by product mass and their renormalised weights."""
    k_tilde = net.k_tilde if k_tilde is None else k_tilde
    p, mean, std, _ = net.forward(features)
    q, _ = step_distribution(mean, std, net.n_steps)
    # cell (m, order) lives at subspace index 2(m−1)+order
    mass = (q[:, None] * p[None, :]).ravel()
    # stable sort on −mass keeps the lowest index first among ties
    order = np.argsort(-mass, kind="stable")[:k_tilde]
    w = mass[order]
    w = w / w.sum() if w.sum() > 0 else np.full(len(order), 1.0 / len(order))
    return (RefinementOutput([int(k) for k in order], p, float(mean), float(std), q),
            WeightingOutput(w))
