"""The perception imitator: a small convolutional detector over raster
stacks, plus the box <-> head-map codecs and rotated NMS.

The network is three stride-2 stages with one top-down merge, then 1x1
classification (sigmoid) and regression heads.  Regression cells carry
(dx, dy, log w, log l, sin yaw, cos yaw) where (dx, dy) is the metric
offset from the output-cell center to the box center.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .metrics import iou_rotated
from .raster import GridSpec, RasterStack
from .scene import OrientedBox, normalize_yaw
from .seeding import rng_for

REG_CHANNELS = 6  # (dx, dy, log w, log l, sin, cos)


@dataclass(frozen=True)
class ImitatorConfig:
    in_channels: int = 12
    widths: tuple = (32, 64, 128)
    head_width: int = 64
    downsample: int = 4
    score_threshold: float = 0.5
    nms_iou_threshold: float = 0.3

    def __post_init__(self):
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError("score_threshold must lie in [0, 1]")
        if not (0.0 <= self.nms_iou_threshold <= 1.0):
            raise ValueError("nms_iou_threshold must lie in [0, 1]")
        if len(self.widths) != 3:
            raise ValueError("three backbone stage widths required")
        if self.downsample != 4:
            raise ValueError("the backbone realizes a fixed output stride of 4")


@dataclass
class HeadMaps:
    """Classification map in [0, 1] and 6-channel regression map (H', W', 6).

    Serves both as network output and as the pseudo-target form derived
    from box lists; ``meta`` carries encoding statistics.
    """

    cls: np.ndarray
    reg: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Detection:
    box: OrientedBox
    score: float

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"Detection.score must lie in [0, 1], got {self.score}")


# ---------------------------------------------------------------------------
# parameters and forward pass


def init_params(cfg: ImitatorConfig, seed: int) -> dict:
    """He-normal weights, zero biases; deterministic for a fixed seed."""
    rng = rng_for(seed, "imitator-init")
    w1, w2, w3 = cfg.widths

    def conv(name, o, c, k):
        fan_in = c * k * k
        std = math.sqrt(2.0 / fan_in)
        p[f"{name}.w"] = nm.Tensor(rng.normal(0.0, std, size=(o, c, k, k)), requires_grad=True)
        p[f"{name}.b"] = nm.Tensor(np.zeros(o), requires_grad=True)

    p: dict = {}
    conv("c1", w1, cfg.in_channels, 3)
    conv("c2", w2, w1, 3)
    conv("c3", w3, w2, 3)
    conv("lat", w3, w2, 1)
    conv("post", cfg.head_width, w3, 3)
    conv("cls", 1, cfg.head_width, 1)
    conv("reg", REG_CHANNELS, cfg.head_width, 1)
    # size channels start at a typical vehicle footprint instead of 1x1 m
    p["reg.b"].data[2] = math.log(2.0)
    p["reg.b"].data[3] = math.log(4.4)
    return p


def zero_heads(params: dict) -> None:
    """Zero the head layers: cls becomes sigmoid(0)=0.5, reg becomes 0."""
    for name in ("cls.w", "cls.b", "reg.w", "reg.b"):
        params[name].data[...] = 0.0


def forward_tensors(params: dict, x: np.ndarray, cfg: ImitatorConfig):
    """Graph-building forward; x is (1, C, H, W). Returns (cls, reg) tensors."""
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"input must be (1, {cfg.in_channels}, H, W), got {x.shape}")
    if x.shape[2] % 8 or x.shape[3] % 8:
        raise ValueError(f"grid extents must be divisible by 8, got {x.shape[2]}x{x.shape[3]}")
    t = nm.Tensor(x)
    h1 = nm.relu(nm.conv2d(t, params["c1.w"], params["c1.b"], stride=2, padding=1))
    h2 = nm.relu(nm.conv2d(h1, params["c2.w"], params["c2.b"], stride=2, padding=1))
    h3 = nm.relu(nm.conv2d(h2, params["c3.w"], params["c3.b"], stride=2, padding=1))
    lat = nm.conv2d(h2, params["lat.w"], params["lat.b"])
    merged = nm.relu(nm.add(nm.upsample2x(h3), lat))
    head = nm.relu(nm.conv2d(merged, params["post.w"], params["post.b"], padding=1))
    cls = nm.sigmoid(nm.conv2d(head, params["cls.w"], params["cls.b"]))
    reg = nm.conv2d(head, params["reg.w"], params["reg.b"])
    return cls, reg


def forward(stack: RasterStack, params: dict, cfg: ImitatorConfig) -> HeadMaps:
    """Inference-mode forward over a raster stack."""
    x = stack.as_array()[None]
    with nm.no_grad():
        cls, reg = forward_tensors(params, x, cfg)
    return HeadMaps(cls=cls.data[0, 0], reg=reg.data[0].transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# box <-> map codecs


def cell_centers(grid: GridSpec, downsample: int):
    """Ego-frame (x, y) of output-cell centers, two (H', W') arrays."""
    hp, wp = grid.height_px // downsample, grid.width_px // downsample
    r = (np.arange(hp) * downsample + (downsample - 1) / 2.0)[:, None]
    c = (np.arange(wp) * downsample + (downsample - 1) / 2.0)[None, :]
    x = (grid.ego_anchor[0] - r) * grid.meters_per_px
    y = (grid.ego_anchor[1] - c) * grid.meters_per_px
    return (np.broadcast_to(x, (hp, wp)).copy(), np.broadcast_to(y, (hp, wp)).copy())


def encode_targets(boxes, grid: GridSpec, downsample: int) -> HeadMaps:
    """Derive pseudo cls/reg maps from a box list.

    When two boxes land in one output cell the nearer-to-ego one wins and
    ``meta['cell_collisions']`` counts the loss; out-of-grid centers are
    skipped and counted in ``meta['out_of_bounds']``.
    """
    hp, wp = grid.height_px // downsample, grid.width_px // downsample
    cls = np.zeros((hp, wp))
    reg = np.zeros((hp, wp, REG_CHANNELS))
    cx_map, cy_map = cell_centers(grid, downsample)
    occupant_dist = np.full((hp, wp), np.inf)
    collisions = 0
    oob = 0
    for det in boxes:
        box = det.box if hasattr(det, "box") else det
        r, c = grid.world_to_pixel(box.cx, box.cy)
        i, j = int(math.floor(r / downsample)), int(math.floor(c / downsample))
        if not (0 <= i < hp and 0 <= j < wp):
            oob += 1
            continue
        dist = math.hypot(box.cx, box.cy)
        if cls[i, j] == 1.0:
            collisions += 1
            if dist >= occupant_dist[i, j]:
                continue
        cls[i, j] = 1.0
        occupant_dist[i, j] = dist
        reg[i, j] = (box.cx - cx_map[i, j], box.cy - cy_map[i, j],
                     math.log(box.w), math.log(box.l),
                     math.sin(box.yaw), math.cos(box.yaw))
    return HeadMaps(cls=cls, reg=reg,
                    meta={"cell_collisions": collisions, "out_of_bounds": oob})


def decode(maps: HeadMaps, grid: GridSpec, downsample: int, score_threshold: float) -> list:
    """Emit a Detection for every cell at or above the score threshold."""
    cx_map, cy_map = cell_centers(grid, downsample)
    rr, cc = np.nonzero(maps.cls >= score_threshold)
    dets = []
    for i, j in zip(rr.tolist(), cc.tolist()):
        params = maps.reg[i, j]
        if not np.all(np.isfinite(params)):
            raise ValueError(f"non-finite regression under active cell ({i}, {j})")
        dx, dy, lw, ll, sn, cs = params
        try:
            box = OrientedBox(cx=cx_map[i, j] + dx, cy=cy_map[i, j] + dy,
                              w=math.exp(lw), l=math.exp(ll),
                              yaw=normalize_yaw(math.atan2(sn, cs)))
        except OverflowError:
            raise ValueError(f"non-finite decoded box under active cell ({i}, {j})") from None
        dets.append(Detection(box=box, score=float(np.clip(maps.cls[i, j], 0.0, 1.0))))
    return dets


def nms_rotated(dets, iou_threshold: float) -> list:
    """Greedy suppression; score ties resolved by input order."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    cx = np.array([d.box.cx for d in dets])
    cy = np.array([d.box.cy for d in dets])
    radius = np.array([0.5 * math.hypot(d.box.w, d.box.l) for d in dets])
    kept = []
    for i in order:
        ok = True
        for k in kept:
            # boxes farther apart than their circumradii cannot overlap
            if math.hypot(cx[i] - cx[k], cy[i] - cy[k]) > radius[i] + radius[k]:
                continue
            if iou_rotated(dets[i].box, dets[k].box) >= iou_threshold:
                ok = False
                break
        if ok:
            kept.append(i)
    return [dets[i] for i in kept]


# ---------------------------------------------------------------------------
# shared detections file format


def save_detections(path, dets_by_scene: dict) -> None:
    """JSON lines, one scene per line: {scene_id, dets:[{cx,...,score}]}."""
    with open(path, "w", encoding="utf-8") as f:
        for sid in sorted(dets_by_scene.keys()):
            record = {
                "scene_id": int(sid),
                "dets": [
                    {"cx": d.box.cx, "cy": d.box.cy, "w": d.box.w, "l": d.box.l,
                     "yaw": d.box.yaw, "score": d.score}
                    for d in dets_by_scene[sid]
                ],
            }
            f.write(json.dumps(record) + "\n")


def load_detections(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                dets = [
                    Detection(box=OrientedBox(d["cx"], d["cy"], d["w"], d["l"], d["yaw"]),
                              score=d["score"])
                    for d in record["dets"]
                ]
                out[int(record["scene_id"])] = dets
            except (json.JSONDecodeError, KeyError) as e:
                raise ValueError(f"{path}:{lineno}: malformed detections record ({e})") from e
    return out
