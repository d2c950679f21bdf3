"""Traffic-scene domain model, scene corpus files, and a seeded generator.

Conventions: right-handed world frame, x forward / y left in ego frame,
yaw counterclockwise from +x and normalized to (-pi, pi].  All types are
immutable value objects; construction validates invariants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .seeding import rng_for

TAU = 2.0 * math.pi


class SceneValidationError(ValueError):
    """An invariant of a scene type was violated; message names the field."""


class SceneFormatError(ValueError):
    """A scene file line could not be parsed; message names the line."""


class GenerationError(RuntimeError):
    """Random placement failed; message names the scene index."""


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle onto (-pi, pi] (half-open at -pi)."""
    y = math.pi - (math.pi - yaw) % TAU
    if y <= -math.pi:
        y += TAU
    return y


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise SceneValidationError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class Pose2:
    """Planar pose: x, y in meters, yaw in radians (normalized on build)."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        _require_finite("Pose2.x/y/yaw", self.x, self.y, self.yaw)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclass(frozen=True)
class OrientedBox:
    """Box from bird's-eye view: center, width (lateral), length (along yaw)."""

    cx: float
    cy: float
    w: float
    l: float
    yaw: float

    def __post_init__(self):
        _require_finite("OrientedBox fields", self.cx, self.cy, self.w, self.l, self.yaw)
        if self.w <= 0:
            raise SceneValidationError(f"OrientedBox.w must be > 0, got {self.w}")
        if self.l <= 0:
            raise SceneValidationError(f"OrientedBox.l must be > 0, got {self.l}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    def corners(self) -> np.ndarray:
        """(4, 2) corners in order front-left, front-right, rear-right, rear-left."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.l, 0.5 * self.w
        # length axis (c, s); width axis points left (-s, c)
        out = np.empty((4, 2))
        for k, (a, b) in enumerate(((1, 1), (1, -1), (-1, -1), (-1, 1))):
            out[k, 0] = self.cx + a * hl * c - b * hw * s
            out[k, 1] = self.cy + a * hl * s + b * hw * c
        return out

    def contains(self, x, y) -> np.ndarray:
        """Pointwise closed-inequality membership test (broadcasts)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = np.asarray(x) - self.cx
        dy = np.asarray(y) - self.cy
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (np.abs(u) <= 0.5 * self.l) & (np.abs(v) <= 0.5 * self.w)


AGENT_KINDS = ("vehicle", "pedestrian")


@dataclass(frozen=True)
class Agent:
    id: int
    box: OrientedBox
    speed: float
    kind: str = "vehicle"

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise SceneValidationError(f"Agent.kind must be one of {AGENT_KINDS}, got {self.kind!r}")
        _require_finite("Agent.speed", self.speed)
        if self.speed < 0:
            raise SceneValidationError(f"Agent.speed must be >= 0, got {self.speed}")


def _polygon_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _frozen_points(points, min_len: int, what: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < min_len:
        raise SceneValidationError(f"{what} needs at least {min_len} (x, y) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneValidationError(f"{what} has non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoadMap:
    """Free-space polygons and waypoint polylines, world-frame meters."""

    freespace: tuple = ()
    waypoint_lines: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, RoadMap):
            return NotImplemented
        return (
            len(self.freespace) == len(other.freespace)
            and len(self.waypoint_lines) == len(other.waypoint_lines)
            and all(np.array_equal(a, b) for a, b in zip(self.freespace, other.freespace))
            and all(np.array_equal(a, b)
                    for a, b in zip(self.waypoint_lines, other.waypoint_lines))
        )

    def __post_init__(self):
        fs = tuple(_frozen_points(p, 3, "RoadMap.freespace polygon") for p in self.freespace)
        for p in fs:
            if abs(_polygon_area(p)) < 1e-12:
                raise SceneValidationError("RoadMap.freespace polygon has zero area")
        wl = tuple(_frozen_points(p, 2, "RoadMap.waypoint_lines polyline") for p in self.waypoint_lines)
        object.__setattr__(self, "freespace", fs)
        object.__setattr__(self, "waypoint_lines", wl)

    @property
    def empty(self) -> bool:
        return not self.freespace and not self.waypoint_lines


@dataclass(frozen=True)
class SceneState:
    """One timestep: ego pose + footprint, other agents, road geometry."""

    t: float
    ego: Pose2
    ego_box: OrientedBox
    agents: tuple = ()
    road: RoadMap = field(default_factory=RoadMap)

    def __post_init__(self):
        if not (self.t >= 0.0):
            raise SceneValidationError(f"SceneState.t must be >= 0, got {self.t}")
        if abs(self.ego_box.cx - self.ego.x) > 1e-9 or abs(self.ego_box.cy - self.ego.y) > 1e-9:
            raise SceneValidationError("SceneState.ego_box center must coincide with ego (x, y)")
        agents = tuple(self.agents)
        ids = [a.id for a in agents]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("SceneState.agents ids must be unique")
        object.__setattr__(self, "agents", agents)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Exact separating-axis test for two oriented rectangles (closed)."""
    ca, cb = a.corners(), b.corners()
    for box in (a, b):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        for ax, ay in ((c, s), (-s, c)):
            pa = ca[:, 0] * ax + ca[:, 1] * ay
            pb = cb[:, 0] * ax + cb[:, 1] * ay
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


# ---------------------------------------------------------------------------
# ego-frame transform


def _transform_box(box: OrientedBox, ex: float, ey: float, c: float, s: float) -> OrientedBox:
    dx, dy = box.cx - ex, box.cy - ey
    return OrientedBox(
        cx=c * dx + s * dy,
        cy=-s * dx + c * dy,
        w=box.w,
        l=box.l,
        yaw=normalize_yaw(box.yaw - math.atan2(s, c)),
    )


def to_ego_frame(scene: SceneState) -> SceneState:
    """Rigidly move the scene so the ego pose becomes (0, 0, 0)."""
    ex, ey, eyaw = scene.ego.x, scene.ego.y, scene.ego.yaw
    c, s = math.cos(eyaw), math.sin(eyaw)

    def pts(arr):
        dx = arr[:, 0] - ex
        dy = arr[:, 1] - ey
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)

    road = RoadMap(
        freespace=tuple(pts(p) for p in scene.road.freespace),
        waypoint_lines=tuple(pts(p) for p in scene.road.waypoint_lines),
    )
    agents = tuple(replace(a, box=_transform_box(a.box, ex, ey, c, s)) for a in scene.agents)
    return SceneState(
        t=scene.t,
        ego=Pose2(0.0, 0.0, 0.0),
        ego_box=_transform_box(scene.ego_box, ex, ey, c, s),
        agents=agents,
        road=road,
    )


# ---------------------------------------------------------------------------
# line-delimited corpus files


def _box_to_dict(b: OrientedBox) -> dict:
    return {"cx": b.cx, "cy": b.cy, "w": b.w, "l": b.l, "yaw": b.yaw}


def _box_from_dict(d: dict) -> OrientedBox:
    return OrientedBox(cx=d["cx"], cy=d["cy"], w=d["w"], l=d["l"], yaw=d["yaw"])


def scene_to_dict(scene: SceneState) -> dict:
    return {
        "t": scene.t,
        "ego": {"x": scene.ego.x, "y": scene.ego.y, "yaw": scene.ego.yaw},
        "ego_box": _box_to_dict(scene.ego_box),
        "agents": [
            {"id": a.id, "kind": a.kind, "speed": a.speed, "box": _box_to_dict(a.box)}
            for a in scene.agents
        ],
        "road": {
            "freespace": [p.tolist() for p in scene.road.freespace],
            "waypoint_lines": [p.tolist() for p in scene.road.waypoint_lines],
        },
    }


def scene_from_dict(d: dict) -> SceneState:
    try:
        ego = d["ego"]
        return SceneState(
            t=d["t"],
            ego=Pose2(ego["x"], ego["y"], ego["yaw"]),
            ego_box=_box_from_dict(d["ego_box"]),
            agents=tuple(
                Agent(id=a["id"], kind=a["kind"], speed=a["speed"], box=_box_from_dict(a["box"]))
                for a in d["agents"]
            ),
            road=RoadMap(
                freespace=tuple(d["road"]["freespace"]),
                waypoint_lines=tuple(d["road"]["waypoint_lines"]),
            ),
        )
    except KeyError as e:
        raise SceneFormatError(f"scene record missing key {e.args[0]!r}") from e


def save_scenes(scenes: Iterable[SceneState], path) -> None:
    """Write one JSON object per line; lossless to float repr precision."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            for scene in scenes:
                f.write(json.dumps(scene_to_dict(scene)) + "\n")
    except OSError as e:
        raise OSError(f"cannot write scene file {path}: {e}") from e


def load_scenes(path) -> list:
    """Read a scene corpus; errors name the offending line / field."""
    scenes = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SceneFormatError(f"{path}:{lineno}: not valid JSON ({e.msg})") from e
            try:
                scenes.append(scene_from_dict(record))
            except (SceneFormatError, SceneValidationError) as e:
                raise type(e)(f"{path}:{lineno}: {e}") from e
    return scenes


# ---------------------------------------------------------------------------
# seeded synthetic generator


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings for the synthetic corpus generator.

    Agents are rejection-placed in ``region`` (x0, x1, y0, y1 meters, ego
    frame) with all box corners inside, pairwise center distance at least
    ``min_spacing`` and no box overlap (ego box included).
    """

    n_scenes: int = 10
    agent_count: tuple = (2, 6)  # inclusive range
    region: tuple = (6.0, 44.0, -12.0, 12.0)
    min_spacing: float = 5.0
    speed_range: tuple = (0.0, 0.0)
    vehicle_w: tuple = (1.7, 2.1)
    vehicle_l: tuple = (3.8, 5.0)
    pedestrian_prob: float = 0.0
    pedestrian_size: tuple = (0.6, 0.8)  # (w, l)
    yaw_mode: str = "random"  # "random" | "aligned"
    aligned_jitter: float = 0.15
    road_halfwidth: float = 14.0
    road_length: float = 60.0
    ego_size: tuple = (1.9, 4.4)  # (w, l)
    max_place_tries: int = 100


def _corridor_road(cfg: GeneratorConfig) -> RoadMap:
    hw, ln = cfg.road_halfwidth, cfg.road_length
    freespace = [[[-8.0, -hw], [ln, -hw], [ln, hw], [-8.0, hw]]]
    waypoints = [[[-8.0, 0.0], [ln, 0.0]]]
    return RoadMap(freespace=tuple(freespace), waypoint_lines=tuple(waypoints))


def generate_scenes(seed: int, cfg: GeneratorConfig) -> list:
    """Deterministic corpus: same (seed, cfg) gives identical scenes."""
    rng = rng_for(seed, "scene-generator")
    road = _corridor_road(cfg)
    ego_box = OrientedBox(0.0, 0.0, cfg.ego_size[0], cfg.ego_size[1], 0.0)
    x0, x1, y0, y1 = cfg.region
    scenes = []
    for si in range(cfg.n_scenes):
        n_agents = int(rng.integers(cfg.agent_count[0], cfg.agent_count[1] + 1))
        placed = []
        for ai in range(n_agents):
            ok = False
            for _ in range(cfg.max_place_tries):
                kind = "pedestrian" if rng.random() < cfg.pedestrian_prob else "vehicle"
                if kind == "vehicle":
                    w = float(rng.uniform(*cfg.vehicle_w))
                    l = float(rng.uniform(*cfg.vehicle_l))
                else:
                    w, l = cfg.pedestrian_size
                if cfg.yaw_mode == "aligned":
                    yaw = float(rng.normal(0.0, cfg.aligned_jitter))
                else:
                    yaw = float(rng.uniform(-math.pi, math.pi))
                cx = float(rng.uniform(x0, x1))
                cy = float(rng.uniform(y0, y1))
                box = OrientedBox(cx, cy, w, l, yaw)
                corners = box.corners()
                if (corners[:, 0].min() < x0 or corners[:, 0].max() > x1
                        or corners[:, 1].min() < y0 or corners[:, 1].max() > y1):
                    continue
                if any(math.hypot(cx - p.box.cx, cy - p.box.cy) < cfg.min_spacing for p in placed):
                    continue
                if any(boxes_overlap(box, p.box) for p in placed) or boxes_overlap(box, ego_box):
                    continue
                speed = float(rng.uniform(*cfg.speed_range)) if kind == "vehicle" else 0.0
                placed.append(Agent(id=ai, box=box, speed=speed, kind=kind))
                ok = True
                break
            if not ok:
                raise GenerationError(
                    f"scene {si}: could not place agent {ai} after "
                    f"{cfg.max_place_tries} tries (spacing {cfg.min_spacing} m)"
                )
        scenes.append(SceneState(t=0.0, ego=Pose2(0.0, 0.0, 0.0), ego_box=ego_box,
                                 agents=tuple(placed), road=road))
    return scenes
