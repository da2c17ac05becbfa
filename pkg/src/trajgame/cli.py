"""Command line interface.

Every command is deterministic given ``--seed``.  Failures print one JSON
object ``{"error": <kind>, "message": <text>}`` on stderr and exit with a
nonzero status (2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import data_io
from .checks import SCENARIOS, gradcheck
from .config import Config, load_config
from .errors import TrajGameError
from .pipeline import (MERGER, OTHER, TglWeights, cross_validate, decision_transfer, evaluate,
                       evaluate_baseline, fit, scene_game, synth_generate, tgl_forward)
from .report import format_table, write_plot
from .scenarios.driving import driving_subspace
from .scenarios.geometry import RoadGeometry, load_geometry
from .solver import maximize_on_polytope

log = logging.getLogger("trajgame")
WEIGHTS_FORMAT = "trajgame-weights"


class CliError(Exception):
    """Raised for invalid combinations of command line inputs."""


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False)
    if path:
        Path(path).write_text(text + "\n")
    else:
        click.echo(text)


def _cfg(ctx, **overrides) -> Config:
    o = ctx.obj
    return load_config(o["config"], seed=o["seed"], threads=o["threads"], **overrides)


def _dataset(path, allow_empty=False):
    scenes = data_io.load_dataset(path)
    if not scenes and not allow_empty:
        raise CliError(f"dataset {path} contains no scenes")
    return scenes


def save_weights(weights: TglWeights, cfg: Config, path) -> None:
    doc = {"format": WEIGHTS_FORMAT, "config": cfg.to_dict(), "weights": weights.to_dict()}
    Path(path).write_text(json.dumps(doc))


def load_weights(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != WEIGHTS_FORMAT:
        raise CliError(f"{path} is not a weights file")
    return TglWeights.from_dict(doc["weights"]), doc.get("config", {})


def _weights_and_cfg(ctx, path):
    """Weights plus the config they were trained with (variant, sizes, time grid)."""
    weights, saved = load_weights(path)
    cfg = _cfg(ctx)
    for key in ("variant", "dt", "horizon_s", "past_window", "terminal_vel_steps", "k_tilde"):
        if key in saved:
            setattr(cfg, key, type(getattr(cfg, key))(saved[key]))
    return weights, cfg


@click.group()
@click.option("--seed", type=int, default=None, help="Random seed (overrides the config).")
@click.option("--threads", type=int, default=None, help="Worker threads for independent solves.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Config JSON (default: $TRAJGAME_CONFIG or built-in defaults).")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, seed, threads, config_path, verbose):
    """Trajectory game learning: fit, predict, evaluate and query merge scenes."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"seed": seed, "threads": threads, "config": config_path}


@cli.command("import")
@click.argument("csv_files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", default="highd", help="highd, hee, native or a TrackFormat JSON file.")
@click.option("--geometry", "geometry_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--source", default=None, help="Source tag stored in the scene files.")
@click.pass_context
def import_cmd(ctx, csv_files, fmt, geometry_path, out, source):
    """Import track CSVs and write the filtered two-car merge scenes."""
    cfg = _cfg(ctx)
    geometry = load_geometry(geometry_path) if geometry_path else RoadGeometry()
    if fmt.lower().endswith(".json"):
        track_fmt = data_io.TrackFormat.from_dict(json.loads(Path(fmt).read_text()))
    else:
        track_fmt = fmt
    source = source or (fmt if not fmt.endswith(".json") else Path(fmt).stem)
    scenes = []
    for path in csv_files:
        tracks = data_io.import_tracks(path, track_fmt, geometry, cfg.dt)
        scenes += data_io.filter_merge_scenes(tracks, geometry, cfg.isolation_radius, cfg.past_window,
                                              cfg.n_future, cfg.dt, source)
    paths = data_io.save_dataset(scenes, out)
    _dump({"n_scenes": len(scenes), "files": [str(p) for p in paths]})


@cli.command()
@click.option("--n", "n_scenes", type=int, default=50)
@click.option("--noise", type=float, default=0.0, help="Std of Gaussian noise on the futures [m].")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def synth(ctx, n_scenes, noise, out):
    """Generate synthetic merge scenes whose futures are equilibria."""
    cfg = _cfg(ctx)
    scenes = synth_generate(None, None, n_scenes, noise, cfg.seed, cfg)
    paths = data_io.save_dataset(scenes, out)
    _dump({"n_scenes": len(scenes), "files": [str(p) for p in paths]})


def _read_theta(arg, scene):
    if arg is None or arg == "scene":
        if scene.theta is None:
            raise CliError("the scene carries no theta; pass --theta")
        return np.asarray(scene.theta, float)
    p = Path(arg)
    if p.exists():
        doc = json.loads(p.read_text())
        return np.asarray(doc["theta"] if isinstance(doc, dict) else doc, float)
    return np.asarray(json.loads(arg), float)


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--theta", default=None, help="JSON file or list, or 'scene' (default) for the scene's θ.")
@click.option("--subspace", type=int, required=True, help="Subspace index k = 2(m−1) + order.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def solve(ctx, scene_path, theta, subspace, out):
    """Solve for the local NE of one merge subspace."""
    cfg = _cfg(ctx)
    scene = data_io.load_scene(scene_path)
    th = _read_theta(theta, scene)
    game = scene_game(scene.past, scene.geometry, cfg)
    if th.size != game.n_params:
        raise CliError(f"theta has {th.size} entries, the scene's game needs {game.n_params}")
    poly = driving_subspace(scene.geometry, scene.past, cfg.num_steps, subspace, cfg.driving())
    rep = maximize_on_polytope(game, th, poly, cfg.solve_options())
    doc = rep.to_dict()
    doc.update({"subspace": subspace, "description": poly.description})
    _dump(doc, out)


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Config for this run (takes precedence over the global --config).")
@click.option("--out-weights", required=True, type=click.Path(dir_okay=False))
@click.option("--loss-log", type=click.Path(dir_okay=False), default=None,
              help="CSV of per-epoch losses (default: next to the weights).")
@click.pass_context
def train(ctx, dataset, config_path, out_weights, loss_log):
    """Train the preference and refinement nets on a scene set."""
    if config_path:
        ctx.obj["config"] = config_path
    cfg = _cfg(ctx)
    scenes = _dataset(dataset)
    weights, hist = fit(scenes, cfg)
    save_weights(weights, cfg, out_weights)
    loss_log = loss_log or str(Path(out_weights).with_suffix("")) + "_loss.csv"
    with open(loss_log, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "epoch", "train_loss", "val_loss"])
        for phase in ("refinement", "full"):
            for r in hist[phase]:
                w.writerow([phase, r["epoch"], r["train_loss"], r.get("val_loss", "")])
    _dump({"weights": out_weights, "loss_log": loss_log, "variant": cfg.variant,
           "n_scenes": len(scenes)})


def _prediction_doc(scene, pred, cfg) -> dict:
    doc = pred.to_dict()
    doc["dt"] = cfg.dt
    doc["scene_id"] = scene.scene_id
    doc["scene"] = {"past": scene.past.tolist(), "future": scene.future.tolist()}
    return doc


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def predict(ctx, scene_path, weights_path, out):
    """Multi-modal prediction for one scene."""
    weights, cfg = _weights_and_cfg(ctx, weights_path)
    scene = data_io.load_scene(scene_path)
    pred = tgl_forward(scene.past, weights, cfg, scene.geometry)
    _dump(_prediction_doc(scene, pred, cfg), out)


@cli.command("eval")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Evaluate fixed weights; without it, run k-fold cross-validation.")
@click.option("--folds", type=int, default=4)
@click.option("--name", default=None, help="Data set name in the table (default: scene source tag).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="EvalReport JSON path.")
@click.option("--table", type=click.Path(dir_okay=False), default=None, help="Table text path.")
@click.pass_context
def eval_cmd(ctx, dataset, weights_path, folds, name, out, table):
    """Averaged MAE/RMSE per method, as JSON and as a comparison table."""
    scenes = _dataset(dataset)
    if weights_path:
        weights, cfg = _weights_and_cfg(ctx, weights_path)
        reports = {cfg.variant: evaluate(scenes, weights, cfg), "CV": evaluate_baseline(scenes, cfg)}
    else:
        cfg = _cfg(ctx, folds=folds)
        reports = cross_validate(scenes, cfg)
    name = name or scenes[0].source
    _dump({"dataset": name, "reports": {k: r.to_dict() for k, r in reports.items()}}, out)
    text = format_table({name: reports})
    if table:
        Path(table).write_text(text)
    click.echo(text, err=out is None)


@cli.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--theta", default=None, help="Use this θ instead of the preference net.")
@click.option("--ego", type=click.Choice(["other", "merger"]), default="other")
@click.option("--emergency-brake", is_flag=True, help="Set the ego's desired speed to 0.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Directory for one trajectory CSV per equilibrium.")
@click.pass_context
def decide(ctx, scene_path, weights_path, theta, ego, emergency_brake, out_dir):
    """Local NE of the scene's game after changing the ego's preferences."""
    scene = data_io.load_scene(scene_path)
    if weights_path:
        weights, cfg = _weights_and_cfg(ctx, weights_path)
        th = tgl_forward(scene.past, weights, cfg, scene.geometry).theta
    else:
        cfg = _cfg(ctx)
        th = _read_theta(theta, scene)
    ego_i = OTHER if ego == "other" else MERGER
    outcomes, failures = decision_transfer(scene.past, th, scene.geometry, cfg, ego_i,
                                           0.0 if emergency_brake else None)
    rows = []
    for o in outcomes:
        p = o.positions
        speed = np.linalg.norm(p[:, -1] - p[:, -2], axis=-1) / cfg.dt
        row = {"k": o.k, "description": o.description, "potential": o.potential,
               "status": o.report.status.value,
               "merger_ahead_at_end": bool(p[MERGER, -1, 0] > p[OTHER, -1, 0]),
               "terminal_speed": speed.tolist()}
        if out_dir:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            f = Path(out_dir) / f"ne_k{o.k:02d}.csv"
            with open(f, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["agent", "stage", "t", "x", "y"])
                for i in range(p.shape[0]):
                    for j in range(p.shape[1]):
                        w.writerow([i, j, round(j * cfg.dt, 10), p[i, j, 0], p[i, j, 1]])
            row["csv"] = str(f)
        rows.append(row)
    _dump({"ego": ego, "emergency_brake": emergency_brake, "equilibria": rows,
           "failed": {str(k): str(e) for k, e in failures.items()}})


@cli.command("gradcheck")
@click.option("--scenario", type=click.Choice(SCENARIOS), default="pedestrian")
@click.option("--instances", type=int, default=10)
@click.option("--tol", type=float, default=1e-3)
@click.pass_context
def gradcheck_cmd(ctx, scenario, instances, tol):
    """Implicit-layer Jacobian vs finite differences; exits 1 on failure."""
    cfg = _cfg(ctx)
    rep = gradcheck(scenario, cfg.seed, instances, tol, cfg)
    _dump(rep)
    if not rep["passed"]:
        ctx.exit(1)


@cli.command()
@click.option("--prediction", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="SVG path.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
def plot(prediction, out, csv_path):
    """SVG of past, ground truth and modes plus a tidy CSV of the same points."""
    pred = json.loads(Path(prediction).read_text())
    if "modes" not in pred:
        raise CliError(f"{prediction} is not a prediction document")
    csv_path = csv_path or str(Path(out).with_suffix(".csv"))
    write_plot(pred, out, csv_path)
    _dump({"svg": out, "csv": csv_path})


def _error(kind: str, message: str) -> None:
    click.echo(json.dumps({"error": kind, "message": message}), err=True)


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="trajgame", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        _error("Aborted", "aborted")
        return 1
    except click.ClickException as exc:
        _error(type(exc).__name__, exc.format_message())
        return 2
    except (TrajGameError, CliError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        _error(type(exc).__name__, str(exc))
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
