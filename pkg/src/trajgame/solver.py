"""Concave maximisation of a game potential over a compact polytope.

The main entry point is :func:`maximize_on_polytope`: a log-barrier Newton
method followed by an active-set Newton polish, so that boundary solutions lie
exactly on their active hyperplanes and carry exact KKT multipliers.  A
warm-start path (``start=`` plus ``active_hint=``) skips the barrier when the
previous active set is still optimal, which makes finite-difference probes and
training loops cheap.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from .errors import Infeasible, NonFiniteUtility

log = logging.getLogger(__name__)


@dataclass
class Polytope:
    """Compact polytope {a : G a <= b}.

    ``context`` carries scenario-specific information (lane assignment, order)
    that fixes the smooth branch of the potential on this subspace.
    """

    G: np.ndarray
    b: np.ndarray
    label: int = 0
    description: str = ""
    context: Any = None
    interior_hint: Optional[np.ndarray] = None

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, float))
        self.b = np.asarray(self.b, float).reshape(-1)
        if self.G.shape[0] != self.b.shape[0]:
            raise ValueError("G and b disagree on the number of constraints")
        if not np.all(np.isfinite(self.G)) or np.any(np.all(self.G == 0, axis=1)):
            raise ValueError("constraint rows must be finite and nonzero")

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def slacks(self, a) -> np.ndarray:
        return self.b - self.G @ np.asarray(a, float)

    def contains(self, a, tol: float = 1e-9) -> bool:
        return bool(np.all(self.slacks(a) >= -tol))

    def violation(self, a) -> float:
        """Total constraint violation Σ max(0, −slack)."""
        return float(np.maximum(0.0, -self.slacks(a)).sum())

    @classmethod
    def box(cls, lo, hi, **kw) -> "Polytope":
        lo = np.asarray(lo, float).reshape(-1)
        hi = np.asarray(hi, float).reshape(-1)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), **kw)

    def intersect(self, G, b, **kw) -> "Polytope":
        G = np.atleast_2d(np.asarray(G, float))
        b = np.asarray(b, float).reshape(-1)
        fields = dict(label=self.label, description=self.description,
                      context=self.context, interior_hint=self.interior_hint)
        fields.update(kw)
        return Polytope(np.vstack([self.G, G]), np.concatenate([self.b, b]), **fields)


@dataclass
class SolveOptions:
    grad_tol: float = 1e-8
    max_newton_steps: int = 200
    barrier_initial: float = 1.0
    barrier_factor: float = 0.1
    barrier_final: float = 1e-8
    armijo_c: float = 1e-4
    shrink: float = 0.5
    slack_tol: float = 1e-7
    lambda_tol: float = 1e-7
    feas_tol: float = 1e-9

    def __post_init__(self):
        for name in ("grad_tol", "barrier_initial", "barrier_final", "armijo_c",
                     "shrink", "slack_tol", "lambda_tol", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.barrier_factor < 1 or not 0 < self.shrink < 1:
            raise ValueError("barrier_factor and shrink must lie in (0, 1)")
        if self.max_newton_steps < 1:
            raise ValueError("max_newton_steps must be positive")


class Status(enum.Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    MAXITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass
class SolveReport:
    argmax: np.ndarray
    potential_value: float
    active_constraints: list
    multipliers: np.ndarray
    iterations: int
    status: Status
    kkt_residual: float = float("nan")
    # (barrier parameter, barrier objective, potential) for every accepted step
    trace: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status in (Status.INTERIOR, Status.BOUNDARY)

    def to_dict(self) -> dict:
        return {
            "argmax": self.argmax.tolist(),
            "potential_value": self.potential_value,
            "active_constraints": [int(m) for m in self.active_constraints],
            "multipliers": self.multipliers.tolist(),
            "iterations": self.iterations,
            "status": self.status.value,
            "kkt_residual": self.kkt_residual,
        }


def _is_box(poly: Polytope) -> bool:
    return bool(np.all(np.count_nonzero(poly.G, axis=1) == 1))


def find_interior_point(poly: Polytope, min_slack: float = 1e-6) -> np.ndarray:
    """A point with slack >= ``min_slack`` in every constraint.

    Tries, in order, the polytope's own hint, the midpoint of the implied box
    (exact for pure boxes) and a phase-1 max-slack LP.
    """
    if poly.interior_hint is not None:
        hint = np.asarray(poly.interior_hint, float)
        if np.all(poly.slacks(hint) >= min_slack):
            return hint.copy()
    if _is_box(poly):
        lo = np.full(poly.dim, -np.inf)
        hi = np.full(poly.dim, np.inf)
        for g, b in zip(poly.G, poly.b):
            j = int(np.flatnonzero(g)[0])
            bound = b / g[j]
            if g[j] > 0:
                hi[j] = min(hi[j], bound)
            else:
                lo[j] = max(lo[j], bound)
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            mid = 0.5 * (lo + hi)
            if np.all(poly.slacks(mid) >= min_slack):
                return mid
            raise Infeasible("box has no interior")
    return _phase_one(poly, min_slack)


def _phase_one(poly: Polytope, min_slack: float) -> np.ndarray:
    # max t  s.t.  G a + t |G_m| <= b,  t <= 1
    n = poly.dim
    norms = np.linalg.norm(poly.G, axis=1)
    A_ub = np.hstack([poly.G, norms[:, None]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=poly.b, bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= 0:
        raise Infeasible("polytope has an empty interior")
    a = res.x[:n]
    if np.min(poly.slacks(a)) < min_slack:
        raise Infeasible(f"max slack {np.min(poly.slacks(a)):.3g} below {min_slack}")
    return a


# -- barrier Newton -------------------------------------------------------

def _safe_potential(game, theta, a) -> float:
    try:
        return game.potential(theta, a)
    except NonFiniteUtility:
        return -np.inf


def _newton_direction(H, g):
    """Ascent direction solving H d = −g for negative definite H."""
    try:
        cho = scipy.linalg.cho_factor(-H, lower=True, check_finite=True)
        d = scipy.linalg.cho_solve(cho, g)
        if np.all(np.isfinite(d)):
            return d, True
    except (np.linalg.LinAlgError, ValueError):
        pass
    return g.copy(), False


class _RowGram:
    """Fast Gᵀ diag(w) G for a constraint matrix with few nonzeros per row."""

    def __init__(self, G):
        self.G = G
        self.n = G.shape[1]
        rows, cols = np.nonzero(G)
        self.sparse = rows.size < 0.1 * G.size
        if self.sparse:
            m, c1, c2, v = [], [], [], []
            for r in range(G.shape[0]):
                nz = cols[rows == r]
                for i in nz:
                    for j in nz:
                        m.append(r); c1.append(i); c2.append(j); v.append(G[r, i] * G[r, j])
            self.m = np.asarray(m, int)
            self.flat = np.asarray(c1, int) * self.n + np.asarray(c2, int)
            self.v = np.asarray(v, float)

    def __call__(self, w):
        if not self.sparse:
            return (self.G.T * w) @ self.G
        out = np.bincount(self.flat, weights=w[self.m] * self.v, minlength=self.n * self.n)
        return out.reshape(self.n, self.n)


def _barrier_stage(game, theta, poly, a, mu, opts, trace, gram=None):
    """Maximise φ + μ Σ log(slack) from a strictly feasible ``a``."""
    G, b = poly.G, poly.b
    gram = gram or _RowGram(G)
    s = b - G @ a
    f = _safe_potential(game, theta, a) + mu * np.log(s).sum()
    steps = 0
    for steps in range(1, opts.max_newton_steps + 1):
        inv_s = 1.0 / s
        grad = game.potential_gradient(theta, a) - mu * (G.T @ inv_s)
        H = game.potential_hessian(theta, a) - mu * gram(inv_s ** 2)
        d, newton = _newton_direction(H, grad)
        slope = float(grad @ d)
        # centering tolerance; the active-set polish supplies the final precision
        if newton and slope / 2 <= max(opts.grad_tol * mu, 1e-12 * (1.0 + abs(f))):
            return a, steps, True
        if not newton and np.linalg.norm(grad, np.inf) <= opts.grad_tol:
            return a, steps, True
        # largest step keeping strict feasibility
        Gd = G @ d
        pos = Gd > 0
        alpha = 1.0
        if np.any(pos):
            alpha = min(1.0, 0.99 * float(np.min(s[pos] / Gd[pos])))
        while True:
            trial = a + alpha * d
            st = b - G @ trial
            if np.all(st > 0):
                phit = _safe_potential(game, theta, trial)
                ft = phit + mu * np.log(st).sum()
                if np.isfinite(ft) and ft >= f + opts.armijo_c * alpha * slope:
                    break
            alpha *= opts.shrink
            if alpha < 1e-16:
                # no progress possible at this precision
                return a, steps, True
        a, s, f = trial, st, ft
        trace.append((mu, f, phit))
    return a, steps, False


def _kkt_direction(H, grad, GA):
    """Solve [[H, G_Aᵀ], [G_A, 0]] [d; ν] = [−grad... ] for a null-space ascent step."""
    n = H.shape[0]
    m = GA.shape[0]
    if m == 0:
        return _newton_direction(H, grad)[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = GA.T
    K[n:, :n] = GA
    rhs = np.concatenate([-grad, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n]


def _project_onto(a, GA, bA):
    if GA.shape[0] == 0:
        return a
    r = bA - GA @ a
    return a + np.linalg.lstsq(GA, r, rcond=None)[0]


def _active_set_newton(game, theta, poly, a, active, opts, max_iter=60):
    """Maximise φ on {G_A a = b_A} from ``a``; returns (a, λ_A, ok, iterations)."""
    G, b = poly.G, poly.b
    GA, bA = G[active], b[active]
    a = _project_onto(a, GA, bA)
    f = _safe_potential(game, theta, a)
    if not np.isfinite(f):
        return a, None, False, 0
    it = 0
    for it in range(1, max_iter + 1):
        grad = game.potential_gradient(theta, a)
        H = game.potential_hessian(theta, a)
        d = _kkt_direction(H, grad, GA)
        if not np.all(np.isfinite(d)):
            return a, None, False, it
        if np.linalg.norm(d, np.inf) <= 1e-13 * (1.0 + np.linalg.norm(a, np.inf)):
            break
        slope = float(grad @ d)
        if slope <= 1e-13 * (1.0 + abs(f)):
            # predicted gain below roundoff: a line search cannot see it, the full
            # Newton step is the final correction
            trial = a + d
            if np.isfinite(_safe_potential(game, theta, trial)):
                a = trial
            break
        alpha = 1.0
        while True:
            trial = a + alpha * d
            ft = _safe_potential(game, theta, trial)
            if np.isfinite(ft) and ft >= f + opts.armijo_c * alpha * min(slope, 0.0) - 1e-14 * (1 + abs(f)):
                break
            alpha *= opts.shrink
            if alpha < 1e-12:
                break
        if alpha < 1e-12:
            break
        a, f = trial, ft
        if alpha == 1.0 and np.linalg.norm(d, np.inf) <= 1e-11 * (1.0 + np.linalg.norm(a, np.inf)):
            break
    grad = game.potential_gradient(theta, a)
    if GA.shape[0]:
        lam = np.linalg.lstsq(GA.T, grad, rcond=None)[0]
    else:
        lam = np.zeros(0)
    return a, lam, True, it


def _kkt_residual(game, theta, a, G, lam) -> float:
    grad = game.potential_gradient(theta, a)
    r = grad - G.T @ lam
    return float(np.linalg.norm(r, np.inf) / (1.0 + np.linalg.norm(grad, np.inf)))


def _try_active_set(game, theta, poly, a0, active, opts):
    """Active-set polish with add/drop rounds. Returns (a, active, λ_full) or None."""
    active = sorted(set(int(m) for m in active))
    M = poly.G.shape[0]
    iters = 0
    for _ in range(2 * M + 5 if M < 20 else 40):
        a, lam, ok, it = _active_set_newton(game, theta, poly, a0, active, opts)
        iters += it
        if not ok:
            return None
        s = poly.slacks(a)
        inactive = np.setdiff1d(np.arange(M), active)
        if active and np.min(lam) < -opts.lambda_tol:
            # drop the most negative multiplier
            drop = active[int(np.argmin(lam))]
            active = [m for m in active if m != drop]
            a0 = a
            continue
        if inactive.size and np.min(s[inactive]) < -opts.feas_tol:
            add = int(inactive[np.argmin(s[inactive])])
            active = sorted(active + [add])
            continue
        lam_full = np.zeros(M)
        if active:
            lam_full[active] = np.maximum(lam, 0.0)
        return a, active, lam_full, iters
    return None


def _report(game, theta, poly, a, lam_full, iters, opts, trace) -> SolveReport:
    s = poly.slacks(a)
    active = [int(m) for m in np.flatnonzero(s <= opts.slack_tol)]
    lam_full = np.where(s <= opts.slack_tol, lam_full, 0.0)
    status = Status.BOUNDARY if active else Status.INTERIOR
    return SolveReport(
        argmax=a,
        potential_value=game.potential(theta, a),
        active_constraints=active,
        multipliers=lam_full,
        iterations=iters,
        status=status,
        kkt_residual=_kkt_residual(game, theta, a, poly.G, lam_full),
        trace=trace,
    )


def maximize_on_polytope(game, theta, poly: Polytope, opts: SolveOptions | None = None,
                         start=None, active_hint=None) -> SolveReport:
    """Unique argmax of the (strictly concave) potential over ``poly``.

    With ``start`` given, first tries an active-set Newton solve from it using
    ``active_hint`` (empty = interior); on any failure falls back to the cold
    barrier path.
    """
    opts = opts or SolveOptions()
    theta = np.asarray(theta, float)
    game = game.restricted(poly)
    if start is not None:
        res = _try_active_set(game, theta, poly, np.asarray(start, float),
                              active_hint or [], opts)
        if res is not None:
            a, active, lam_full, iters = res
            if poly.contains(a, opts.feas_tol):
                rep = _report(game, theta, poly, a, lam_full, iters, opts, [])
                if rep.kkt_residual <= 1e-6:
                    return rep

    try:
        a = find_interior_point(poly)
    except Infeasible:
        return SolveReport(np.full(poly.dim, np.nan), float("nan"), [],
                           np.zeros(poly.G.shape[0]), 0, Status.INFEASIBLE)
    if not np.isfinite(_safe_potential(game, theta, a)):
        raise NonFiniteUtility("potential not finite at the phase-1 point")

    trace: list = []
    mu = opts.barrier_initial
    total = 0
    gram = _RowGram(poly.G)
    while True:
        a, steps, ok = _barrier_stage(game, theta, poly, a, mu, opts, trace, gram)
        total += steps
        if not ok:
            log.warning("barrier stage mu=%g hit max_newton_steps", mu)
            rep = _report(game, theta, poly, a, mu / poly.slacks(a), total, opts, trace)
            rep.status = Status.MAXITER
            return rep
        if mu <= opts.barrier_final * (1 + 1e-12):
            break
        mu = max(mu * opts.barrier_factor, opts.barrier_final)

    s = poly.slacks(a)
    lam_barrier = mu / s
    candidates = [int(m) for m in np.flatnonzero(lam_barrier > s)]
    res = _try_active_set(game, theta, poly, a, candidates, opts)
    if res is not None:
        a2, active, lam_full, iters = res
        if poly.contains(a2, opts.feas_tol):
            rep = _report(game, theta, poly, a2, lam_full, total + iters, opts, trace)
            if rep.kkt_residual <= 1e-6:
                return rep
    log.debug("active-set polish failed; reporting barrier iterate")
    return _report(game, theta, poly, a, np.where(lam_barrier > s, lam_barrier, 0.0),
                   total, opts, trace)


def verify_local_ne(game, theta, a, radius: float, trials: int, poly: Polytope | None = None,
                    rng=None) -> float:
    """Largest unilateral utility gain found among random local deviations.

    For each agent, ``trials`` perturbations of that agent's action block are
    drawn uniformly from the ball of the given radius; when ``poly`` is given
    they are pulled back along the ray towards ``a`` until feasible.  A value
    <= 1e-8 certifies ``a`` as a local Nash equilibrium empirically.
    """
    rng = np.random.default_rng(rng)
    a = np.asarray(a, float)
    theta = np.asarray(theta, float)
    if poly is not None:
        game = game.restricted(poly)
    worst = -np.inf
    for i in range(game.n_agents):
        sl = game.agent_slice(i)
        d = game.action_dim
        base = game.utility(i, theta, a)
        for _ in range(trials):
            v = rng.normal(size=d)
            v *= radius * rng.uniform() ** (1.0 / d) / np.linalg.norm(v)
            delta = np.zeros_like(a)
            delta[sl] = v
            if poly is not None:
                Gd = poly.G @ delta
                s = poly.slacks(a)
                pos = Gd > 0
                if np.any(pos):
                    delta *= min(1.0, max(0.0, float(np.min(np.maximum(s[pos], 0.0) / Gd[pos]))))
            try:
                gain = game.utility(i, theta, a + delta) - base
            except NonFiniteUtility:
                continue
            worst = max(worst, gain)
    return float(worst)
