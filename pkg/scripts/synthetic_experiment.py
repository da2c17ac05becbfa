"""Train on noise-free synthetic merge scenes and compare against constant velocity.

    python3 scripts/synthetic_experiment.py --n 50 --seed 0
"""
import argparse
import json
import time

import numpy as np

from trajgame.config import Config
from trajgame.pipeline import (evaluate, evaluate_baseline, fold_indices, init_weights,
                               refinement_accuracy, synth_generate, train_full, train_refinement)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    args = ap.parse_args()

    cfg = Config(lr=3e-3, max_epochs=args.epochs, patience=15, seed=args.seed)
    t0 = time.perf_counter()
    data = synth_generate(None, None, args.n, args.noise, args.seed, cfg)
    test_idx = fold_indices(len(data), 4, args.seed)[0]
    train = [s for j, s in enumerate(data) if j not in set(test_idx.tolist())]
    test = [data[j] for j in test_idx]
    rng = np.random.default_rng(args.seed)
    labels = [s.label for s in train]

    w = init_weights(train, cfg, rng, labels)
    w, _ = train_refinement(train, w, cfg, rng, labels)
    acc = refinement_accuracy(w, test, [s.label for s in test], cfg)
    w, hist = train_full(train, w, cfg, rng, labels)
    tgl, cv = evaluate(test, w, cfg), evaluate_baseline(test, cfg)

    print(json.dumps({
        "train_scenes": len(train), "test_scenes": len(test),
        "refinement_accuracy": acc,
        "mae": {"TGL": tgl.mae_avg, "CV": cv.mae_avg},
        "rmse": {"TGL": tgl.rmse_avg, "CV": cv.rmse_avg},
        "epochs": len(hist), "seconds": round(time.perf_counter() - t0, 1),
    }, indent=2))


if __name__ == "__main__":
    main()
