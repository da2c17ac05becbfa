"""Scene files, track CSV import and merge-scene filtering.

A SceneFile is a JSON document::

    {"format": "trajgame-scene", "version": 1, "scene_id": ..., "source": ...,
     "dt": 0.2, "geometry": {...}, "agents": ["merger", "other"],
     "past":   {"t": [...], "positions": [[[x, y], ...], ...]},
     "future": {"t": [...], "positions": ...},
     "label": null | int, "theta": null | [...]}

Times are seconds relative to the first future stage.  The full schema lives
in docs/scene_file.md.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataFormatError
from .pipeline import Scene
from .scenarios.geometry import RoadGeometry

log = logging.getLogger(__name__)

SCENE_FORMAT = "trajgame-scene"
SCENE_VERSION = 1
HEE_BANNER = ("HEE recordings may be noisy in places (trajectory/map mismatch); "
              "use the results for experimental purposes only")


# -- scene files -----------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    L, S = scene.past.shape[1], scene.future.shape[1]
    return {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "scene_id": scene.scene_id,
        "source": scene.source,
        "dt": scene.dt,
        "geometry": scene.geometry.to_dict(),
        "agents": ["merger", "other"][:scene.past.shape[0]],
        "past": {"t": [(j - L) * scene.dt for j in range(L)], "positions": scene.past.tolist()},
        "future": {"t": [j * scene.dt for j in range(S)], "positions": scene.future.tolist()},
        "label": scene.label,
        "theta": None if scene.theta is None else np.asarray(scene.theta).tolist(),
    }


def _check_times(t, dt, what):
    t = np.asarray(t, float)
    if t.size > 1 and (np.any(np.diff(t) <= 0) or np.max(np.abs(np.diff(t) - dt)) > 1e-6):
        raise DataFormatError(f"{what} timestamps must be increasing with step {dt}")


def scene_from_dict(d: dict) -> Scene:
    if d.get("format") != SCENE_FORMAT:
        raise DataFormatError("not a scene file")
    if d.get("version") != SCENE_VERSION:
        raise DataFormatError(f"unsupported scene file version {d.get('version')}")
    try:
        dt = float(d["dt"])
        _check_times(d["past"]["t"], dt, "past")
        _check_times(d["future"]["t"], dt, "future")
        return Scene(np.asarray(d["past"]["positions"], float), np.asarray(d["future"]["positions"], float),
                     dt, d.get("source", "unknown"), d.get("scene_id", ""),
                     RoadGeometry.from_dict(d["geometry"]), d.get("label"),
                     None if d.get("theta") is None else np.asarray(d["theta"], float))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed scene file: {exc}") from exc


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


def load_scene(path) -> Scene:
    try:
        return scene_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def save_dataset(scenes, directory) -> list:
    """One scene file per scene, named by position; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, s in enumerate(scenes):
        p = d / f"scene_{j:04d}.json"
        save_scene(s, p)
        paths.append(p)
    return paths


def load_dataset(path) -> list:
    """Scenes from a directory of scene files (sorted by name) or a single file."""
    p = Path(path)
    if p.is_dir():
        return [load_scene(f) for f in sorted(p.glob("*.json"))]
    return [load_scene(p)]


# -- tracks ------------------------------------------------------------------------

@dataclass
class TrackFormat:
    """Column mapping of a per-frame track CSV."""

    name: str
    id_col: str
    frame_col: str
    x_col: str
    y_col: str
    frame_rate: float
    width_col: Optional[str] = None    # when set, x/y are box corners: add half size
    height_col: Optional[str] = None
    noisy: bool = False
    geometry_frame: bool = False       # coordinates already in the geometry frame

    @classmethod
    def from_dict(cls, d) -> "TrackFormat":
        return cls(**d)


FORMATS = {
    "highd": TrackFormat("HighDLike", "id", "frame", "x", "y", 25.0, "width", "height"),
    "hee": TrackFormat("HEELike", "track_id", "frame", "x", "y", 25.0, noisy=True),
}


@dataclass
class RawTrack:
    track_id: str
    t: np.ndarray            # seconds, on the resampled grid
    positions: np.ndarray    # (N, 2) in the geometry frame


def resample_track(t, positions, dt: float):
    """Linear interpolation onto the grid of multiples of dt inside [t0, t_end]."""
    t = np.asarray(t, float)
    positions = np.asarray(positions, float)
    start = np.ceil(t[0] / dt - 1e-9)
    stop = np.floor(t[-1] / dt + 1e-9)
    grid = np.arange(start, stop + 1) * dt
    out = np.stack([np.interp(grid, t, positions[:, c]) for c in range(2)], axis=1)
    # samples that already sit on the grid are copied, so re-importing an
    # exported track reproduces it bit for bit
    j = np.clip(np.searchsorted(t, grid), 0, t.size - 1)
    j = np.where((j > 0) & (np.abs(t[j - 1] - grid) < np.abs(t[j] - grid)), j - 1, j)
    hit = np.abs(t[j] - grid) <= 1e-9 * max(1.0, abs(grid[-1]) if grid.size else 1.0)
    out[hit] = positions[j[hit]]
    return grid, out


def import_tracks(path, fmt: TrackFormat | str, geometry: RoadGeometry, dt: float = 0.2) -> list:
    """Tracks from a per-frame CSV, resampled to ``dt`` and mapped into the geometry frame."""
    if isinstance(fmt, str):
        try:
            fmt = FORMATS[fmt.lower()]
        except KeyError:
            raise DataFormatError(f"unknown track format {fmt}") from None
    if fmt.noisy:
        log.warning(HEE_BANNER)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [fmt.id_col, fmt.frame_col, fmt.x_col, fmt.y_col] + \
               [c for c in (fmt.width_col, fmt.height_col) if c]
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise DataFormatError(f"{path}: missing columns {missing}")
        rows = {}
        for r in reader:
            try:
                x, y = float(r[fmt.x_col]), float(r[fmt.y_col])
                if fmt.width_col:
                    x += float(r[fmt.width_col]) / 2
                if fmt.height_col:
                    y += float(r[fmt.height_col]) / 2
                rows.setdefault(r[fmt.id_col], []).append((float(r[fmt.frame_col]), x, y))
            except ValueError as exc:
                raise DataFormatError(f"{path}: bad value ({exc})") from exc
    tracks = []
    for tid, rs in rows.items():
        arr = np.asarray(rs)
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise DataFormatError(f"{path}: frames of track {tid} are not increasing")
        if arr.shape[0] < 2:
            continue
        x, y = arr[:, 1], arr[:, 2]
        if not fmt.geometry_frame:
            x, y = geometry.frame.apply(x, y)
        grid, pos = resample_track(arr[:, 0] / fmt.frame_rate, np.stack([x, y], axis=1), dt)
        if grid.size:
            tracks.append(RawTrack(str(tid), grid, pos))
    return tracks


def export_tracks(tracks, path, dt: float = 0.2) -> None:
    """Write tracks as a native CSV (track_id, frame, x, y) with frame = t/dt."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["track_id", "frame", "x", "y"])
        for tr in tracks:
            for t, (x, y) in zip(tr.t, tr.positions):
                w.writerow([tr.track_id, int(round(t / dt)), repr(float(x)), repr(float(y))])


NATIVE = TrackFormat("Native", "track_id", "frame", "x", "y", 5.0, geometry_frame=True)
FORMATS["native"] = NATIVE


# -- merge scenes ----------------------------------------------------------------------

def _at(track: RawTrack, grid, dt: float):
    """Positions of ``track`` on ``grid`` (NaN where the track does not exist)."""
    j = np.rint(grid / dt).astype(int) - int(np.rint(track.t[0] / dt))
    out = np.full((grid.size, 2), np.nan)
    ok = (j >= 0) & (j < track.t.size)
    out[ok] = track.positions[j[ok]]
    return out


def filter_merge_scenes(tracks, geometry: RoadGeometry, isolation_radius: float = 50.0,
                        past_window: int = 15, n_future: int = 35, dt: float = 0.2,
                        source: str = "tracks") -> list:
    """Two-car merge scenes: an on-ramp car that changes into the highway lane
    and the nearest highway car, with nobody else within ``isolation_radius``.

    The window is placed so that the lane change falls in the middle of the
    future part when the recording allows it.
    """
    ramp, hw = geometry.ramp_lane, geometry.highway_lane
    lanes = {tr.track_id: np.array([geometry.lane_of(y) for y in tr.positions[:, 1]]) for tr in tracks}
    total = past_window + n_future
    scenes = []
    for m_tr in tracks:
        ln = lanes[m_tr.track_id]
        change = np.flatnonzero((ln[:-1] == ramp) & (ln[1:] == hw))
        if change.size == 0 or ln[0] != ramp:
            continue
        t_merge = m_tr.t[change[0] + 1]
        # past ends half a horizon before the merge, clipped to the recording
        end_past = t_merge - (n_future // 2) * dt
        lo = m_tr.t[0] + (past_window - 1) * dt
        hi = m_tr.t[-1] - n_future * dt
        end_past = min(max(end_past, lo), hi)
        if end_past < lo - 1e-9 or t_merge <= end_past + 1e-9 or t_merge > end_past + (n_future - 1) * dt:
            continue
        grid = end_past + (np.arange(total) - (past_window - 1)) * dt
        j_merge = past_window - 1 + int(round((t_merge - end_past) / dt))
        pm = _at(m_tr, grid, dt)
        if np.any(np.isnan(pm)):
            continue
        best, best_d = None, np.inf
        for o_tr in tracks:
            if o_tr is m_tr:
                continue
            po = _at(o_tr, grid, dt)
            if np.any(np.isnan(po)):
                continue
            if np.any([geometry.lane_of(y) != hw for y in po[:, 1]]):
                continue
            d = abs(po[j_merge, 0] - pm[j_merge, 0])
            if d < best_d:
                best, best_d = (o_tr, po), d
        if best is None:
            continue
        o_tr, po = best
        isolated = True
        for tr in tracks:
            if tr is m_tr or tr is o_tr:
                continue
            pt = _at(tr, grid, dt)
            ok = ~np.isnan(pt[:, 0])
            if not ok.any():
                continue
            dm = np.linalg.norm(pt[ok] - pm[ok], axis=1)
            do = np.linalg.norm(pt[ok] - po[ok], axis=1)
            if min(dm.min(), do.min()) < isolation_radius:
                isolated = False
                break
        if not isolated:
            continue
        pos = np.stack([pm, po])
        scenes.append(Scene(pos[:, :past_window], pos[:, past_window:], dt, source,
                            f"{source}-{m_tr.track_id}-{o_tr.track_id}", geometry))
    return scenes
