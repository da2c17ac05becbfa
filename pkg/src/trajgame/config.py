"""Run configuration: one flat dataclass, loadable from JSON.

The path can also come from the ``TRAJGAME_CONFIG`` environment variable.
Unknown keys are rejected so that typos do not silently fall back to
defaults.  See docs/config.md for the field list.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .scenarios.driving import DrivingConfig
from .solver import SolveOptions

ENV_VAR = "TRAJGAME_CONFIG"
VARIANTS = ("TGL", "TGL-D", "TGL-DP")


@dataclass
class Config:
    # solver
    grad_tol: float = 1e-8
    max_newton_steps: int = 200
    barrier_initial: float = 1.0
    barrier_factor: float = 0.1
    barrier_final: float = 1e-8
    slack_tol: float = 1e-7
    lambda_tol: float = 1e-7
    corner_backward: str = "fd"        # "fd" or "zero" for several active constraints
    # game
    zeta: float = 1.0
    softplus_beta: float = 20.0
    ridge: float = 1e-6
    ordering_gap: float = 0.5
    band_gap: float = 0.02
    terminal_vel_steps: int = 6
    lane_width: float = 3.5
    # time
    dt: float = 0.2
    horizon_s: float = 7.0
    past_window: int = 15
    # nets
    variant: str = "TGL"
    k_tilde: int = 4
    pref_hidden: tuple = (16, 24)
    order_hidden: tuple = (16, 4)
    time_hidden: tuple = (64, 32)
    dropout: float = 0.6
    tgl_d_lo: float = 0.6
    tgl_d_hi: float = 1.4
    big_change: float = 1.2
    small_change: float = 1.04
    # training
    optimizer: str = "momentum"        # "momentum" or "lbfgs"
    lr: float = 1e-3
    momentum: float = 0.9
    max_epochs: int = 500
    patience: int = 20
    refine_lr: float = 3e-3
    refine_max_epochs: int = 3000
    refine_patience: int = 200
    val_fraction: float = 0.2
    label_tolerance: float = 0.5
    # data
    isolation_radius: float = 50.0
    folds: int = 4
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.corner_backward not in ("fd", "zero"):
            raise ValueError("corner_backward must be 'fd' or 'zero'")
        if self.optimizer not in ("momentum", "lbfgs"):
            raise ValueError("optimizer must be 'momentum' or 'lbfgs'")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.k_tilde < 1:
            raise ValueError("k_tilde must be positive")
        if self.past_window < 2:
            raise ValueError("past_window must be at least 2")
        self.pref_hidden = tuple(int(v) for v in self.pref_hidden)
        self.order_hidden = tuple(int(v) for v in self.order_hidden)
        self.time_hidden = tuple(int(v) for v in self.time_hidden)
        # horizon_s must be a whole number of steps
        steps = self.horizon_s / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 4:
            raise ValueError("horizon_s must be a multiple of dt covering at least 4 steps")

    @property
    def n_future(self) -> int:
        """Number of predicted positions (stages 0..T)."""
        return int(round(self.horizon_s / self.dt))

    @property
    def num_steps(self) -> int:
        return self.n_future - 1

    def solve_options(self) -> SolveOptions:
        return SolveOptions(grad_tol=self.grad_tol, max_newton_steps=self.max_newton_steps,
                            barrier_initial=self.barrier_initial, barrier_factor=self.barrier_factor,
                            barrier_final=self.barrier_final, slack_tol=self.slack_tol,
                            lambda_tol=self.lambda_tol)

    def driving(self) -> DrivingConfig:
        return DrivingConfig(zeta=self.zeta, softplus_beta=self.softplus_beta, ridge=self.ridge,
                             ordering_gap=self.ordering_gap, band_gap=self.band_gap,
                             terminal_vel_steps=self.terminal_vel_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path=None, **overrides) -> Config:
    """Config from ``path``, else from $TRAJGAME_CONFIG, else defaults; then overrides."""
    path = path or os.environ.get(ENV_VAR)
    d = json.loads(Path(path).read_text()) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return Config.from_dict(d)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))
