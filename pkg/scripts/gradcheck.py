"""Implicit-layer Jacobian against finite differences of the solver, both scenarios."""
import argparse
import json
import sys

from trajgame.checks import gradcheck

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seed", type=int, default=42)
ap.add_argument("--instances", type=int, default=10)
ap.add_argument("--tol", type=float, default=1e-3)
args = ap.parse_args()

ok = True
for scenario in ("pedestrian", "driving"):
    rep = gradcheck(scenario, args.seed, args.instances, args.tol)
    rep.pop("instances")
    print(json.dumps(rep))
    ok &= bool(rep["passed"])
sys.exit(0 if ok else 1)
