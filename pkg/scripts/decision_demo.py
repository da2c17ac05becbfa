"""Emergency-brake query: set the highway car's desired speed to zero and list the local NE.

The merger sits on the ramp 2 m ahead of the highway car, both at 20 m/s.
Writes one CSV per equilibrium when --out-dir is given.
"""
import argparse
from pathlib import Path

import numpy as np

from trajgame.config import Config
from trajgame.nets import psi_to_theta
from trajgame.pipeline import decision_transfer
from trajgame.scenarios import MERGER, OTHER, subspace_cell


def constant_speed_past(window, dt, cars):
    past = np.zeros((len(cars), window, 2))
    tau = (np.arange(window) - (window - 1)) * dt
    for i, (x0, y0, v) in enumerate(cars):
        past[i, :, 0] = x0 + v * tau
        past[i, :, 1] = y0
    return past


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = Config(threads=args.threads)
    past = constant_speed_past(cfg.past_window, cfg.dt, [(180.0, -3.5, 20.0), (178.0, 0.0, 20.0)])
    psi = np.ones((2, 6))
    psi[:, 0] = 20.0    # desired speed
    psi[:, 1] = 5.0     # terminal velocity weight
    theta = psi_to_theta(psi, 1.0, cfg.n_future)
    outs, failed = decision_transfer(past, theta, None, cfg, ego=OTHER, override_v=0.0)

    print(f"{len(outs)} local NE, {len(failed)} failed solves")
    print(f"{'k':>4} {'merge step':>10} {'first':>7} {'potential':>12} {'ego speed':>10} {'merger ahead':>13}")
    for o in outs:
        m, order = subspace_cell(o.k)
        p = o.positions
        v_ego = np.linalg.norm(p[OTHER, -1] - p[OTHER, -2]) / cfg.dt
        ahead = p[MERGER, -1, 0] > p[OTHER, -1, 0]
        print(f"{o.k:>4} {m:>10} {'merger' if order == 0 else 'other':>7} {o.potential:>12.3f} "
              f"{v_ego:>10.2f} {str(ahead):>13}")
        if args.out_dir:
            args.out_dir.mkdir(parents=True, exist_ok=True)
            rows = [(i, t, *p[i, t]) for i in range(p.shape[0]) for t in range(p.shape[1])]
            np.savetxt(args.out_dir / f"ne_k{o.k:03d}.csv", np.array(rows), delimiter=",",
                       header="agent,stage,x,y", comments="", fmt=["%d", "%d", "%.6f", "%.6f"])


if __name__ == "__main__":
    main()
