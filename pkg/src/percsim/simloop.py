"""Synthesis-free closed loop: perceive -> range readings -> reactive plan
-> kinematic world update, with per-step episode logging.

The planner is a deterministic speed controller for a straight corridor:
proportional control toward a target speed, full braking when the nearest
forward range drops under the safety distance, zero steering.  The world
advances the ego with a kinematic bicycle model and other agents at
constant speed along their headings; an episode ends on collision
(ego box overlapping any agent box) or at the horizon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import iou_rotated
from .scene import Agent, OrientedBox, Pose2, SceneState, to_ego_frame
from .seeding import derive_seed, rng_for


@dataclass(frozen=True)
class RangeSpec:
    n_bins: int = 31
    fov: float = math.pi  # forward field of view, centered on +x
    r_max: float = 50.0

    def __post_init__(self):
        if self.n_bins <= 0 or self.fov <= 0 or self.r_max <= 0:
            raise ValueError("RangeSpec fields must be positive")


@dataclass(frozen=True)
class RangeReading:
    azimuths: tuple
    ranges: tuple


@dataclass(frozen=True)
class PlannerConfig:
    target_speed: float = 8.0
    accel_gain: float = 1.0
    d_safe: float = 8.0
    forward_halfwidth: float = 0.35  # rad; bins treated as "ahead"


@dataclass(frozen=True)
class WorldConfig:
    wheelbase: float = 2.7
    dt: float = 0.1
    a_min: float = -6.0
    a_max: float = 3.0
    steer_max: float = 0.5


@dataclass(frozen=True)
class EgoAction:
    accel: float
    steer: float


def to_range_readings(dets, spec: RangeSpec) -> RangeReading:
    """Distance along each bin's center ray to the nearest box boundary."""
    half = spec.fov / 2.0
    width = spec.fov / spec.n_bins
    azimuths = tuple(-half + (i + 0.5) * width for i in range(spec.n_bins))
    ranges = []
    for az in azimuths:
        dx, dy = math.cos(az), math.sin(az)
        best = spec.r_max
        for det in dets:
            box = det.box if hasattr(det, "box") else det
            t = _ray_box_distance(dx, dy, box)
            if t is not None and t < best:
                best = t
        ranges.append(max(best, 1e-9))
    return RangeReading(azimuths=azimuths, ranges=tuple(ranges))


def _ray_box_distance(dx: float, dy: float, box: OrientedBox):
    """First boundary hit of the ray from the origin, None if missed."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    ox = -box.cx * c - box.cy * s
    oy = box.cx * s - box.cy * c
    dbx = dx * c + dy * s
    dby = -dx * s + dy * c
    t_lo, t_hi = -math.inf, math.inf
    for o, d, half in ((ox, dbx, 0.5 * box.l), (oy, dby, 0.5 * box.w)):
        if d == 0.0:
            if abs(o) > half:
                return None
            continue
        t1, t2 = (-half - o) / d, (half - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_lo, t_hi = max(t_lo, t1), min(t_hi, t2)
    if t_lo > t_hi or t_hi < 0:
        return None
    return t_lo if t_lo >= 0 else t_hi


def plan(ranges: RangeReading, ego_speed: float, cfg: PlannerConfig,
         world: WorldConfig = WorldConfig()) -> EgoAction:
    """Reactive corridor policy; pure function of its inputs."""
    accel = cfg.accel_gain * (cfg.target_speed - ego_speed)
    forward = [r for az, r in zip(ranges.azimuths, ranges.ranges)
               if abs(az) <= cfg.forward_halfwidth]
    if forward and min(forward) < cfg.d_safe:
        accel = world.a_min
    return EgoAction(accel=float(np.clip(accel, world.a_min, world.a_max)), steer=0.0)


def step_world(scene: SceneState, ego_speed: float, action: EgoAction,
               world: WorldConfig = WorldConfig()):
    """Advance one step. Returns (next scene, next ego speed, collided)."""
    dt = world.dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    accel = float(np.clip(action.accel, world.a_min, world.a_max))
    steer = float(np.clip(action.steer, -world.steer_max, world.steer_max))
    ego = scene.ego
    x = ego.x + ego_speed * math.cos(ego.yaw) * dt
    y = ego.y + ego_speed * math.sin(ego.yaw) * dt
    yaw = ego.yaw + ego_speed * math.tan(steer) / world.wheelbase * dt
    speed = max(0.0, ego_speed + accel * dt)
    new_ego = Pose2(x, y, yaw)
    ego_box = OrientedBox(cx=x, cy=y, w=scene.ego_box.w, l=scene.ego_box.l, yaw=new_ego.yaw)
    agents = []
    for a in scene.agents:
        b = a.box
        agents.append(replace(a, box=OrientedBox(
            cx=b.cx + a.speed * math.cos(b.yaw) * dt,
            cy=b.cy + a.speed * math.sin(b.yaw) * dt,
            w=b.w, l=b.l, yaw=b.yaw)))
    nxt = SceneState(t=scene.t + dt, ego=new_ego, ego_box=ego_box,
                     agents=tuple(agents), road=scene.road)
    collided = any(iou_rotated(ego_box, a.box) > 0.0 for a in nxt.agents)
    return nxt, speed, collided


# ---------------------------------------------------------------------------
# perception sources

# A perception source is perceive(ego_scene, step_seed) -> list[Detection];
# step_seed varies per step so stochastic sources re-roll each frame.


def annotation_perception():
    from .imitator import Detection

    def perceive(scene: SceneState, step_seed: int):
        return [Detection(box=a.box, score=1.0) for a in scene.agents if a.kind == "vehicle"]

    return perceive


def proxy_perception(grid, spec):
    from .baselines import target_proxy_perceive

    def perceive(scene: SceneState, step_seed: int):
        return target_proxy_perceive(scene, grid, spec, scene_id=step_seed)

    return perceive


def gaussian_perception(spec):
    from .baselines import gaussian_baseline

    def perceive(scene: SceneState, step_seed: int):
        boxes = [a.box for a in scene.agents if a.kind == "vehicle"]
        return gaussian_baseline(boxes, spec, scene_id=step_seed)

    return perceive


def multimodal_perception(model, fn_ratio: float, seed: int):
    from .baselines import multimodal_baseline

    def perceive(scene: SceneState, step_seed: int):
        boxes = [a.box for a in scene.agents if a.kind == "vehicle"]
        return multimodal_baseline(boxes, model, fn_ratio, seed, scene_id=step_seed)

    return perceive


def imitator_perception(params, cfg, grid, pe_spec):
    from .imitator import decode, forward, nms_rotated
    from .raster import build_stack

    def perceive(scene: SceneState, step_seed: int):
        stack = build_stack(scene, grid, pe_spec)
        maps = forward(stack, params, cfg)
        dets = decode(maps, grid, cfg.downsample, cfg.score_threshold)
        return nms_rotated(dets, cfg.nms_iou_threshold)

    return perceive


# ---------------------------------------------------------------------------
# episodes


@dataclass
class StepRecord:
    t: float
    ego: tuple  # (x, y, yaw)
    speed: float
    detections: list  # [(cx, cy, w, l, yaw, score), ...]
    ranges: tuple
    action: tuple  # (accel, steer)
    step_distance: float
    collided: bool


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)
    terminal: str = "horizon"
    distance: float = 0.0

    def to_jsonl(self) -> str:
        lines = []
        for i, s in enumerate(self.steps):
            lines.append(json.dumps({
                "step": i, "t": s.t, "ego": list(s.ego), "speed": s.speed,
                "detections": s.detections, "ranges": list(s.ranges),
                "action": list(s.action), "step_distance": s.step_distance,
                "collided": s.collided,
            }))
        lines.append(json.dumps({"terminal": self.terminal, "distance": self.distance,
                                 "steps": len(self.steps)}))
        return "\n".join(lines) + "\n"


def run_episode(scene0: SceneState, perceive, planner_cfg: PlannerConfig,
                world: WorldConfig, range_spec: RangeSpec, horizon: int,
                seed: int = 0, ego_speed0: float = 0.0) -> EpisodeLog:
    """Iterate the closed loop until collision or horizon."""
    log = EpisodeLog()
    scene = scene0
    speed = ego_speed0
    for step in range(horizon):
        ego_scene = to_ego_frame(scene)
        try:
            dets = perceive(ego_scene, derive_seed(seed, "step", step))
        except Exception as e:  # noqa: BLE001 - cause is recorded, not masked
            log.terminal = f"perception_error: {type(e).__name__}: {e}"
            break
        ranges = to_range_readings(dets, range_spec)
        action = plan(ranges, speed, planner_cfg, world)
        prev = scene.ego
        scene, speed, collided = step_world(scene, speed, action, world)
        moved = math.hypot(scene.ego.x - prev.x, scene.ego.y - prev.y)
        log.distance += moved
        log.steps.append(StepRecord(
            t=scene.t, ego=(scene.ego.x, scene.ego.y, scene.ego.yaw), speed=speed,
            detections=[(d.box.cx, d.box.cy, d.box.w, d.box.l, d.box.yaw, d.score)
                        for d in dets],
            ranges=ranges.ranges, action=(action.accel, action.steer),
            step_distance=moved, collided=collided))
        if collided:
            log.terminal = "collision"
            break
    return log


# ---------------------------------------------------------------------------
# the built-in corridor scenario used for downstream comparisons


@dataclass(frozen=True)
class FollowingScenario:
    """Ego chases a slower lead vehicle down a straight corridor, with
    parked clutter off-lane; initial gap and speeds are randomized."""

    gap_range: tuple = (14.0, 30.0)
    lead_speed_range: tuple = (2.0, 4.0)
    n_clutter: int = 2
    clutter_x: tuple = (8.0, 40.0)
    clutter_y: tuple = (4.5, 9.0)
    road_halfwidth: float = 12.0
    road_length: float = 400.0


def following_scene(seed: int, scenario: FollowingScenario = FollowingScenario()) -> SceneState:
    from .scene import RoadMap

    rng = rng_for(seed, "following-scenario")
    gap = float(rng.uniform(*scenario.gap_range))
    lead_speed = float(rng.uniform(*scenario.lead_speed_range))
    agents = [Agent(id=0, box=OrientedBox(gap, 0.0, 1.9, 4.4, 0.0),
                    speed=lead_speed, kind="vehicle")]
    for i in range(scenario.n_clutter):
        side = 1.0 if rng.random() < 0.5 else -1.0
        agents.append(Agent(
            id=i + 1,
            box=OrientedBox(float(rng.uniform(*scenario.clutter_x)),
                            side * float(rng.uniform(*scenario.clutter_y)),
                            float(rng.uniform(1.7, 2.1)), float(rng.uniform(3.8, 5.0)),
                            float(rng.normal(0.0, 0.2))),
            speed=0.0, kind="vehicle"))
    hw, ln = scenario.road_halfwidth, scenario.road_length
    road = RoadMap(freespace=([[-8.0, -hw], [ln, -hw], [ln, hw], [-8.0, hw]],),
                   waypoint_lines=([[-8.0, 0.0], [ln, 0.0]],))
    return SceneState(t=0.0, ego=Pose2(0.0, 0.0, 0.0),
                      ego_box=OrientedBox(0.0, 0.0, 1.9, 4.4, 0.0),
                      agents=tuple(agents), road=road)


def run_batch(scenes, perceive_factory, planner_cfg: PlannerConfig, world: WorldConfig,
              range_spec: RangeSpec, horizon: int, seed: int, ego_speed0: float = 0.0):
    """Run one episode per scene with derived seeds; returns (logs, summary)."""
    logs = []
    for i, scene in enumerate(scenes):
        ep_seed = derive_seed(seed, "episode", i)
        logs.append(run_episode(scene, perceive_factory(ep_seed), planner_cfg, world,
                                range_spec, horizon, seed=ep_seed, ego_speed0=ego_speed0))
    distances = [log.distance for log in logs]
    collisions = sum(1 for log in logs if log.terminal == "collision")
    summary = {
        "episodes": len(logs),
        "mean_distance": float(np.mean(distances)) if distances else 0.0,
        "median_distance": float(np.median(distances)) if distances else 0.0,
        "collision_rate": collisions / len(logs) if logs else 0.0,
    }
    return logs, summary
