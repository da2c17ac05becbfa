"""Per-subspace equilibrium solves as a differentiable layer.

forward solves arg max_a φ(θ, a) on every refined subspace; backward returns
the Jacobian of each solution map θ ↦ a*_k(θ):

* interior solutions:        J = −H⁻¹ J_θ∇_aφ                    (implicit function theorem)
* one active hyperplane g:   J = upper block of −[[H, g], [λ gᵀ, 0]]⁻¹ [[J_θ∇_aφ], [0]]
* corners (several active):  central finite differences, or zero on request.

Only the converged argmax is differentiated, never the barrier path.
"""
from __future__ import annotations

import enum
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonDifferentiable, SingularHessian, SingularKKT, SolverError, TrajGameError
from .solver import Polytope, SolveOptions, SolveReport, Status, maximize_on_polytope

log = logging.getLogger(__name__)


class JacobianMethod(enum.Enum):
    INTERIOR_IFT = "InteriorIFT"
    BOUNDARY_KKT = "BoundaryKKT"
    FINITE_DIFFERENCE = "FiniteDifference"
    ZERO = "Zero"


class BackwardMode(enum.Enum):
    AUTO = "Auto"
    FORCE_FD = "ForceFD"


@dataclass
class ImplicitJacobian:
    matrix: np.ndarray      # (n·d, p)
    method: JacobianMethod


@dataclass
class ImplicitForwardResult:
    reports: dict                                   # k -> SolveReport
    subspaces: dict                                 # k -> Polytope
    errors: dict = field(default_factory=dict)      # k -> message for failed solves

    @property
    def argmax(self) -> dict:
        return {k: r.argmax for k, r in self.reports.items()}

    @property
    def indices(self) -> list:
        return sorted(self.reports)


def _solve_one(game, theta, poly, opts, warm):
    if warm is not None and warm.converged:
        return maximize_on_polytope(game, theta, poly, opts, start=warm.argmax,
                                    active_hint=list(warm.active_constraints))
    return maximize_on_polytope(game, theta, poly, opts)


def forward(game, theta, subspaces, refined=None, opts: SolveOptions | None = None,
            warm: dict | None = None, workers: int = 1) -> ImplicitForwardResult:
    """Solve on every subspace index in ``refined`` (all of them by default).

    ``warm`` maps k to a previous SolveReport used as a warm start.  Failures
    of single subspaces are collected in ``errors``; the layer raises only
    when every requested solve failed.
    """
    theta = np.asarray(theta, float)
    opts = opts or SolveOptions()
    refined = list(range(len(subspaces))) if refined is None else [int(k) for k in refined]
    if not refined:
        raise ValueError("empty refined index set")
    warm = warm or {}

    def run(k):
        try:
            rep = _solve_one(game, theta, subspaces[k], opts, warm.get(k))
        except TrajGameError as exc:
            return k, None, f"{type(exc).__name__}: {exc}"
        if not rep.converged:
            return k, None, f"solver status {rep.status.value}"
        return k, rep, None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, refined))
    else:
        outcomes = [run(k) for k in refined]

    reports, errors = {}, {}
    for k, rep, err in outcomes:
        if rep is None:
            errors[k] = err
        else:
            reports[k] = rep
    if not reports:
        raise SolverError("all subspace solves failed: " + "; ".join(f"{k}: {e}" for k, e in errors.items()))
    for k, e in errors.items():
        log.warning("subspace %d failed: %s", k, e)
    return ImplicitForwardResult(reports, {k: subspaces[k] for k in refined}, errors)


def backward_interior(game, theta, a_star) -> ImplicitJacobian:
    theta = np.asarray(theta, float)
    a_star = np.asarray(a_star, float)
    H = game.potential_hessian(theta, a_star)
    Jt = game.mixed_jacobian(theta, a_star)
    try:
        # −H is positive definite under strict concavity
        factor = scipy.linalg.cho_factor(-H)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian("potential Hessian is not negative definite") from exc
    d = np.diag(factor[0])
    if np.min(np.abs(d)) ** 2 <= 1e-14 * max(1.0, np.max(np.abs(H))):
        raise SingularHessian("potential Hessian is numerically singular")
    return ImplicitJacobian(scipy.linalg.cho_solve(factor, Jt), JacobianMethod.INTERIOR_IFT)


def backward_boundary(game, theta, a_star, g, lam: float, lambda_tol: float = 1e-7) -> ImplicitJacobian:
    """Jacobian with exactly one active hyperplane gᵀa = b and multiplier λ.

    The second block row λ gᵀ da = 0 is divided by λ > 0, which leaves the
    solution unchanged and makes the block matrix symmetric indefinite.
    """
    theta = np.asarray(theta, float)
    a_star = np.asarray(a_star, float)
    g = np.asarray(g, float).ravel()
    if not lam > lambda_tol:
        raise NonDifferentiable(f"multiplier {lam:.3g} not above lambda_tol; constraint only weakly active")
    H = game.potential_hessian(theta, a_star)
    Jt = game.mixed_jacobian(theta, a_star)
    n = H.shape[0]
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = H
    K[:n, n] = g
    K[n, :n] = g
    rhs = np.vstack([Jt, np.zeros((1, Jt.shape[1]))])
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            sol = scipy.linalg.solve(K, -rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularKKT("KKT block matrix is singular") from exc
    return ImplicitJacobian(sol[:n], JacobianMethod.BOUNDARY_KKT)


def fd_jacobian(game, theta, poly: Polytope, h: float = 1e-4, opts: SolveOptions | None = None,
                base: SolveReport | None = None, directions=None) -> np.ndarray:
    """Central differences of θ ↦ arg max_{poly} φ(θ, ·).

    Coordinate j uses the step h·(1+|θ_j|).  With ``directions`` (p×r) the
    result is the (n·d)×r matrix of directional derivatives along its
    columns, with steps h·(1+‖θ‖_∞).  Probes are warm-started from ``base``.
    """
    theta = np.asarray(theta, float)
    opts = opts or SolveOptions()
    if base is None:
        base = maximize_on_polytope(game, theta, poly, opts)
    if directions is None:
        V = np.eye(theta.size)
        steps = h * (1.0 + np.abs(theta))
    else:
        V = np.asarray(directions, float).reshape(theta.size, -1)
        steps = np.full(V.shape[1], h * (1.0 + np.max(np.abs(theta))))
    cols = []
    for j in range(V.shape[1]):
        probes = []
        for sgn in (1.0, -1.0):
            rep = _solve_one(game, theta + sgn * steps[j] * V[:, j], poly, opts, base)
            if not rep.converged:
                raise SolverError(f"FD probe {j} ({'+' if sgn > 0 else '-'}) status {rep.status.value}")
            probes.append(rep.argmax)
        cols.append((probes[0] - probes[1]) / (2 * steps[j]))
    return np.stack(cols, axis=1)


def backward_one(game, theta, report: SolveReport, poly: Polytope,
                 mode: BackwardMode = BackwardMode.AUTO, corner_zero: bool = False,
                 opts: SolveOptions | None = None) -> ImplicitJacobian:
    opts = opts or SolveOptions()
    g_game = game.restricted(poly)
    if mode is BackwardMode.FORCE_FD:
        return ImplicitJacobian(fd_jacobian(game, theta, poly, opts=opts, base=report),
                                JacobianMethod.FINITE_DIFFERENCE)
    active = list(report.active_constraints)
    if not active:
        return backward_interior(g_game, theta, report.argmax)
    if len(active) == 1:
        m = active[0]
        try:
            return backward_boundary(g_game, theta, report.argmax, poly.G[m],
                                     float(report.multipliers[m]), opts.lambda_tol)
        except (NonDifferentiable, SingularKKT) as exc:
            log.warning("boundary backward unavailable (%s); using finite differences", exc)
    else:
        n = report.argmax.size
        if corner_zero:
            return ImplicitJacobian(np.zeros((n, np.asarray(theta).size)), JacobianMethod.ZERO)
        log.warning("%d active constraints; using finite differences", len(active))
    return ImplicitJacobian(fd_jacobian(game, theta, poly, opts=opts, base=report),
                            JacobianMethod.FINITE_DIFFERENCE)


def backward(game, theta, result: ImplicitForwardResult, mode: BackwardMode = BackwardMode.AUTO,
             corner_zero: bool = False, opts: SolveOptions | None = None) -> dict:
    """Map k ↦ ImplicitJacobian for every successfully solved subspace."""
    if isinstance(mode, str):
        mode = BackwardMode(mode)
    return {k: backward_one(game, theta, rep, result.subspaces[k], mode, corner_zero, opts)
            for k, rep in result.reports.items()}


def pullback(jacobian: ImplicitJacobian, grad_a) -> np.ndarray:
    """dL/dθ from dL/da* for a scalar loss of the solution."""
    return jacobian.matrix.T @ np.asarray(grad_a, float)
