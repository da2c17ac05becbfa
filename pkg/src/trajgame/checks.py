"""Random test instances and the implicit-layer gradient check.

Shared by the ``gradcheck`` command and the test suite.  An instance is a
game, a parameter vector and one subspace on which the solver's argmax is
strictly interior, so the plain implicit-function Jacobian applies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .errors import TrajGameError
from .implicit_layer import JacobianMethod, backward_one, fd_jacobian
from .nets import psi_to_theta
from .scenarios.driving import DrivingGame, enumerate_driving_subspaces
from .scenarios.geometry import RoadGeometry
from .scenarios.pedestrian import (PedestrianGame, PedestrianSetting, enumerate_pedestrian_subspaces)
from .solver import Polytope, SolveReport, Status, maximize_on_polytope

SCENARIOS = ("pedestrian", "driving")


@dataclass
class Instance:
    game: object
    theta: np.ndarray
    poly: Polytope
    report: SolveReport


def random_pedestrian_theta(rng) -> np.ndarray:
    # (dist, vel1, v1, vel2, v2)
    return np.array([rng.uniform(0.2, 2.0), rng.uniform(0.5, 3.0), rng.uniform(0.6, 2.4),
                     rng.uniform(0.5, 3.0), rng.uniform(0.6, 2.4)])


def pedestrian_instance(rng, setting: PedestrianSetting | None = None, max_tries: int = 200) -> Instance:
    setting = setting or PedestrianSetting()
    subs = enumerate_pedestrian_subspaces(setting)
    game = PedestrianGame(setting)
    for _ in range(max_tries):
        theta = random_pedestrian_theta(rng)
        order = rng.permutation(len(subs))
        for j in order:
            rep = maximize_on_polytope(game, theta, subs[j])
            if rep.status is Status.INTERIOR:
                return Instance(game, theta, subs[j], rep)
    raise TrajGameError("no interior pedestrian instance found")


def following_past(rng, window: int = 15, dt: float = 0.2):
    """Two highway cars, the first well ahead of the second, at constant speed."""
    tau = (np.arange(window) - (window - 1)) * dt
    v = rng.uniform(15.0, 25.0, 2)
    x0 = rng.uniform(100.0, 200.0)
    gap = rng.uniform(30.0, 60.0)
    past = np.zeros((2, window, 2))
    past[0, :, 0] = x0 + gap + v[0] * tau
    past[1, :, 0] = x0 + v[1] * tau
    past[:, :, 1] = rng.uniform(-0.3, 0.3, (2, 1))
    return past


def random_driving_theta(rng, v_past, cfg: Config) -> np.ndarray:
    psi = np.column_stack([v_past + rng.uniform(-2.0, 2.0, 2), rng.uniform(0.5, 2.0, (2, 5))])
    return psi_to_theta(psi, rng.uniform(0.5, 2.0), cfg.n_future, cfg.terminal_vel_steps)


def driving_instance(rng, cfg: Config | None = None, geometry: RoadGeometry | None = None,
                     max_tries: int = 50) -> Instance:
    """Car-following instance on the highway lane (the merge subspaces always
    have a binding lane band at the merge step, so they are never interior)."""
    cfg = cfg or Config()
    geometry = geometry or RoadGeometry()
    for _ in range(max_tries):
        past = following_past(rng, cfg.past_window, cfg.dt)
        v = (past[:, -1, 0] - past[:, -2, 0]) / cfg.dt
        theta = random_driving_theta(rng, v, cfg)
        game = DrivingGame(geometry, past, cfg.num_steps, cfg.dt, cfg.driving())
        poly = enumerate_driving_subspaces(geometry, past, cfg.num_steps, cfg.driving(),
                                           scene_kind="Following")[0]
        rep = maximize_on_polytope(game, theta, poly, cfg.solve_options())
        if rep.status is Status.INTERIOR:
            return Instance(game, theta, poly, rep)
    raise TrajGameError("no interior driving instance found")


def make_instance(scenario: str, rng, cfg: Config | None = None) -> Instance:
    if scenario == "pedestrian":
        return pedestrian_instance(rng)
    if scenario == "driving":
        return driving_instance(rng, cfg)
    raise ValueError(f"unknown scenario {scenario}; expected one of {SCENARIOS}")


def jacobian_error(inst: Instance, rng, n_dirs: int | None = None, h: float = 1e-4) -> tuple[float, str]:
    """Relative error of the analytic Jacobian against finite differences of the solver.

    With ``n_dirs`` set (used for the long driving θ) the comparison runs on
    random directional derivatives instead of the full matrix.
    """
    jac = backward_one(inst.game, inst.theta, inst.report, inst.poly)
    p = inst.theta.size
    if n_dirs is None or n_dirs >= p:
        D = np.eye(p)
        fd = fd_jacobian(inst.game, inst.theta, inst.poly, h=h, base=inst.report)
    else:
        D = rng.normal(size=(p, n_dirs))
        D /= np.linalg.norm(D, axis=0)
        fd = fd_jacobian(inst.game, inst.theta, inst.poly, h=h, base=inst.report, directions=D)
    an = jac.matrix @ D
    scale = max(np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(an - fd) / scale), jac.method.value


def gradcheck(scenario: str, seed: int, n_instances: int = 10, tol: float = 1e-3,
              cfg: Config | None = None) -> dict:
    """Implicit-Jacobian vs finite-difference report over random interior instances."""
    rng = np.random.default_rng(seed)
    rows = []
    for j in range(n_instances):
        inst = make_instance(scenario, rng, cfg)
        err, method = jacobian_error(inst, rng, n_dirs=8 if scenario == "driving" else None)
        rows.append({"instance": j, "rel_err": err, "method": method,
                     "passed": bool(err <= tol)})
    errs = [r["rel_err"] for r in rows]
    return {
        "scenario": scenario,
        "seed": seed,
        "tolerance": tol,
        "n_instances": n_instances,
        "n_passed": sum(r["passed"] for r in rows),
        "max_rel_err": max(errs),
        "passed": all(r["passed"] for r in rows),
        "instances": rows,
    }


__all__ = ["Instance", "SCENARIOS", "driving_instance", "following_past", "gradcheck",
           "jacobian_error", "make_instance", "pedestrian_instance", "random_driving_theta",
           "random_pedestrian_theta", "JacobianMethod"]
