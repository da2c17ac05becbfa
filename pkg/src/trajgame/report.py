"""Text tables and plot files for evaluation and prediction outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

# averaged MAE / RMSE over the 7 s horizon in the published comparison
REFERENCE = {
    "highD": {"TGL": (3.6, 4.9), "TGL-D": (2.9, 3.7)},
    "HEE": {"TGL": (3.7, 4.7), "TGL-D": (3.2, 4.1)},
}


def _cell(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def format_table(results: dict, reference: bool = True) -> str:
    """Table in the layout of the published comparison.

    ``results`` maps dataset name to {method: EvalReport}.  Rows are
    (dataset, metric), columns are methods.  Published values are appended as
    ``<dataset> (reference)`` rows when ``reference`` is set.
    """
    methods = []
    for per in results.values():
        for m in per:
            if m not in methods:
                methods.append(m)
    rows = []
    for name, per in results.items():
        for metric in ("MAE", "RMSE"):
            vals = []
            for m in methods:
                r = per.get(m)
                vals.append(None if r is None else (r.mae_avg if metric == "MAE" else r.rmse_avg))
            rows.append((name, metric, [_cell(v) for v in vals]))
        if reference:
            ref = next((v for k, v in REFERENCE.items() if k.lower() == str(name).lower()), None)
            if ref is None:
                continue
            for j, metric in enumerate(("MAE", "RMSE")):
                vals = [_cell(ref[m][j]) if m in ref else "-" for m in methods]
                rows.append((f"{name} (reference)", metric, vals))
    w0 = max([len("Data set")] + [len(r[0]) for r in rows])
    wc = max([8] + [len(m) for m in methods])
    head = f"{'Data set':<{w0}}  {'Metric':<6}  " + "  ".join(f"{m:>{wc}}" for m in methods)
    lines = [head, "-" * len(head)]
    for name, metric, vals in rows:
        lines.append(f"{name:<{w0}}  {metric:<6}  " + "  ".join(f"{v:>{wc}}" for v in vals))
    lines.append("Averaged over the prediction horizon; positions in meters.")
    return "\n".join(lines) + "\n"


def prediction_points(pred: dict) -> list:
    """Tidy rows (series, mode, agent, stage, t, x, y) of a prediction document."""
    dt = pred.get("dt", 0.2)
    rows = []

    def add(series, mode, arr, t0):
        arr = np.asarray(arr, float)
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                rows.append((series, mode, i, j, round(t0 + j * dt, 10), float(arr[i, j, 0]), float(arr[i, j, 1])))

    scene = pred.get("scene") or {}
    if scene.get("past") is not None:
        past = np.asarray(scene["past"], float)
        add("past", "", past, -past.shape[1] * dt)
    if scene.get("future") is not None:
        add("truth", "", scene["future"], 0.0)
    for j, m in enumerate(pred["modes"]):
        add("mode", str(j), m["positions"], 0.0)
    return rows


def write_plot(pred: dict, svg_path, csv_path=None) -> None:
    """SVG of past, ground truth and every mode, plus the same points as CSV."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = prediction_points(pred)
    csv_path = csv_path or Path(svg_path).with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "mode", "agent", "stage", "t", "x", "y"])
        w.writerows(rows)

    agents = ("merger", "other")
    plt.rcParams["svg.hashsalt"] = "trajgame"
    fig, ax = plt.subplots(figsize=(9, 3))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    scene = pred.get("scene") or {}
    for key, style, label in (("past", "k-", "past"), ("future", "k--", "ground truth")):
        if scene.get(key) is None:
            continue
        arr = np.asarray(scene[key], float)
        for i in range(arr.shape[0]):
            ax.plot(arr[i, :, 0], arr[i, :, 1], style, lw=1.2, label=label if i == 0 else None)
    for j, m in enumerate(pred["modes"]):
        arr = np.asarray(m["positions"], float)
        c = colors[j % len(colors)]
        lab = f"mode {j}: {m.get('description', m['k'])} (w={m['weight']:.2f})"
        for i in range(arr.shape[0]):
            ax.plot(arr[i, :, 0], arr[i, :, 1], "-" if i == 0 else ":", color=c, lw=1.5,
                    label=lab if i == 0 else None)
            ax.plot(arr[i, -1, 0], arr[i, -1, 1], "o", color=c, ms=3)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"solid: {agents[0]}, dotted: {agents[1]}")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    # fixed metadata keeps the SVG identical across runs
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
