"""Road geometry: a straight section with lanes parallel to the x-axis."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class Lane:
    name: str
    center_y: float
    x_extent: Optional[tuple] = None
    ends_at: Optional[float] = None


@dataclass(frozen=True)
class FrameTransform:
    """Maps raw recording coordinates into the geometry frame: x' = sx·x + ox."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    def apply(self, x, y):
        return self.scale_x * x + self.offset_x, self.scale_y * y + self.offset_y


@dataclass(frozen=True)
class RoadGeometry:
    x_range: tuple = (0.0, 800.0)
    y_range: tuple = (-5.25, 1.75)
    lanes: tuple = (
        Lane("on_ramp", -3.5, (0.0, 300.0), ends_at=300.0),
        Lane("right", 0.0, (0.0, 800.0)),
    )
    lane_width: float = 3.5
    ramp_lane: int = 0
    highway_lane: int = 1
    frame: FrameTransform = field(default_factory=FrameTransform)

    def __post_init__(self):
        b, c = self.x_range
        if not b < c or not self.y_range[0] < self.y_range[1]:
            raise ValueError("empty road box")
        for lane in self.lanes:
            if lane.ends_at is not None and not b <= lane.ends_at <= c:
                raise ValueError(f"lane {lane.name} ends outside the road box")

    def band(self, lane: int, gap: float = 0.0) -> tuple[float, float]:
        """y-interval of a lane, shrunk by gap/2 on each side."""
        c = self.lanes[lane].center_y
        half = self.lane_width / 2 - gap / 2
        lo = max(c - half, self.y_range[0])
        hi = min(c + half, self.y_range[1])
        return lo, hi

    def lane_of(self, y: float) -> int:
        """Index of the lane whose center is closest to ``y``."""
        return min(range(len(self.lanes)), key=lambda k: abs(self.lanes[k].center_y - y))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lanes"] = [asdict(l) for l in self.lanes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoadGeometry":
        lanes = tuple(
            Lane(l["name"], float(l["center_y"]),
                 None if l.get("x_extent") is None else tuple(float(v) for v in l["x_extent"]),
                 None if l.get("ends_at") is None else float(l["ends_at"]))
            for l in d["lanes"]
        )
        frame = FrameTransform(**d.get("frame", {}))
        return cls(
            x_range=tuple(float(v) for v in d["x_range"]),
            y_range=tuple(float(v) for v in d["y_range"]),
            lanes=lanes,
            lane_width=float(d.get("lane_width", 3.5)),
            ramp_lane=int(d.get("ramp_lane", 0)),
            highway_lane=int(d.get("highway_lane", 1)),
            frame=frame,
        )


def load_geometry(path) -> RoadGeometry:
    return RoadGeometry.from_dict(json.loads(Path(path).read_text()))


def save_geometry(geometry: RoadGeometry, path) -> None:
    Path(path).write_text(json.dumps(geometry.to_dict(), indent=2))
