"""Ego-frame scene to multi-channel bird's-eye-view raster.

Channels: free space, waypoint lines, vehicle occupancy, ray-cast
visibility, and a sinusoidal encoding of longitudinal position.  The grid
places the ego at the bottom-margin anchor heading toward the top row;
rows map to forward distance x, columns to lateral offset y, with +y
(left) toward smaller column indices.

Rasterization samples pixel centers (no area coverage): a binary pixel is
set iff its center satisfies the closed-inequality membership test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .scene import RoadMap, SceneState


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry. ``ego_anchor`` is (row, col) of the ego position;
    ``sensor_origin`` is the ego-frame (x, y) point rays are cast from."""

    height_px: int
    width_px: int
    meters_per_px: float
    ego_anchor: tuple = None
    sensor_origin: tuple = (0.0, 0.0)
    meta: tuple = ()

    def __post_init__(self):
        if self.height_px <= 0 or self.width_px <= 0:
            raise ValueError("grid extents must be positive")
        if self.meters_per_px <= 0:
            raise ValueError("meters_per_px must be positive")
        if self.ego_anchor is None:
            object.__setattr__(self, "ego_anchor",
                               (float(self.height_px - 1), (self.width_px - 1) / 2.0))
        r, c = self.ego_anchor
        if not (0 <= r <= self.height_px - 1 and 0 <= c <= self.width_px - 1):
            raise ValueError("ego_anchor must lie inside the grid")

    def pixel_centers(self):
        """Ego-frame (x, y) of every pixel center, two (H, W) arrays."""
        r = np.arange(self.height_px, dtype=np.float64)[:, None]
        c = np.arange(self.width_px, dtype=np.float64)[None, :]
        x = (self.ego_anchor[0] - r) * self.meters_per_px
        y = (self.ego_anchor[1] - c) * self.meters_per_px
        return np.broadcast_to(x, (self.height_px, self.width_px)).copy(), \
            np.broadcast_to(y, (self.height_px, self.width_px)).copy()

    def world_to_pixel(self, x, y):
        """Continuous (row, col) of ego-frame points."""
        r = self.ego_anchor[0] - np.asarray(x) / self.meters_per_px
        c = self.ego_anchor[1] - np.asarray(y) / self.meters_per_px
        return r, c


def desk_grid(**kw) -> GridSpec:
    return GridSpec(height_px=96, width_px=112, meters_per_px=0.5, **kw)


def paper_scale_grid(**kw) -> GridSpec:
    return GridSpec(height_px=352, width_px=400, meters_per_px=0.2, **kw)


@dataclass(frozen=True)
class PosEncSpec:
    d_model: int = 64

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ValueError("d_model must be a positive even integer")


@dataclass(frozen=True)
class RasterStack:
    grid: GridSpec
    freespace: np.ndarray
    waypoints: np.ndarray
    vehicles: np.ndarray
    occlusion: np.ndarray
    pos_enc: np.ndarray  # (H, W, d_model)

    def as_array(self) -> np.ndarray:
        """(4 + d_model, H, W) float64 stack in fixed channel order."""
        binary = np.stack([self.freespace, self.waypoints, self.vehicles, self.occlusion])
        return np.concatenate([binary.astype(np.float64), self.pos_enc.transpose(2, 0, 1)])

    @property
    def channel_count(self) -> int:
        return 4 + self.pos_enc.shape[2]


# ---------------------------------------------------------------------------
# road channels


def _fill_polygon(poly: np.ndarray, px: np.ndarray, py: np.ndarray, out: np.ndarray) -> None:
    # even-odd rule on pixel centers, half-open edges so shared vertices count once
    inside = np.zeros(out.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        cond = (y1 > py) != (y2 > py)
        with np.errstate(invalid="ignore"):
            xcross = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= cond & (px < xcross)
    out[inside] = 1


def _bresenham(r0: int, c0: int, r1: int, c1: int):
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def rasterize_road(road: RoadMap, grid: GridSpec):
    """Fill freespace polygons, stroke waypoint polylines at one pixel."""
    free = np.zeros((grid.height_px, grid.width_px), dtype=np.uint8)
    way = np.zeros_like(free)
    px, py = grid.pixel_centers()
    for poly in road.freespace:
        _fill_polygon(np.asarray(poly), px, py, free)
    for line in road.waypoint_lines:
        pts = np.asarray(line)
        rr, cc = grid.world_to_pixel(pts[:, 0], pts[:, 1])
        rr = np.rint(rr).astype(int)
        cc = np.rint(cc).astype(int)
        for i in range(len(pts) - 1):
            for r, c in _bresenham(rr[i], cc[i], rr[i + 1], cc[i + 1]):
                if 0 <= r < grid.height_px and 0 <= c < grid.width_px:
                    way[r, c] = 1
    return free, way


# ---------------------------------------------------------------------------
# vehicle occupancy


def rasterize_vehicles(agents, grid: GridSpec) -> np.ndarray:
    """Occupancy of all agent boxes (the ego is not in ``agents``)."""
    out = np.zeros((grid.height_px, grid.width_px), dtype=np.uint8)
    px, py = grid.pixel_centers()
    for agent in agents:
        box = agent.box if hasattr(agent, "box") else agent
        corners = box.corners()
        r, c = grid.world_to_pixel(corners[:, 0], corners[:, 1])
        r0 = max(0, int(math.floor(r.min())) - 1)
        r1 = min(grid.height_px, int(math.ceil(r.max())) + 2)
        c0 = max(0, int(math.floor(c.min())) - 1)
        c1 = min(grid.width_px, int(math.ceil(c.max())) + 2)
        if r0 >= r1 or c0 >= c1:
            continue
        sub = box.contains(px[r0:r1, c0:c1], py[r0:r1, c0:c1])
        out[r0:r1, c0:c1][sub] = 1
    return out


# ---------------------------------------------------------------------------
# ray-cast visibility

# A pixel is visible unless the sensor->pixel segment travels more than one
# pixel length through some single box interior before reaching it; the
# allowance keeps first-hit (near face) pixels visible while everything
# deeper or behind is shadowed.


def segment_box_penetration(origin, targets_x, targets_y, box) -> np.ndarray:
    """Length each segment origin->target spends inside ``box`` (broadcasts)."""
    ox, oy = origin
    dx = np.asarray(targets_x, dtype=np.float64) - ox
    dy = np.asarray(targets_y, dtype=np.float64) - oy
    seg_len = np.hypot(dx, dy)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    # into box frame
    obx = (ox - box.cx) * c + (oy - box.cy) * s
    oby = -(ox - box.cx) * s + (oy - box.cy) * c
    dbx = dx * c + dy * s
    dby = -dx * s + dy * c
    t_lo = np.zeros_like(dbx)
    t_hi = np.ones_like(dbx)
    for o, d, half in ((obx, dbx, 0.5 * box.l), (oby, dby, 0.5 * box.w)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        par = d == 0.0
        inside = np.abs(o) <= half
        near = np.where(par, np.where(inside, -np.inf, np.inf), near)
        far = np.where(par, np.where(inside, np.inf, -np.inf), far)
        t_lo = np.maximum(t_lo, near)
        t_hi = np.minimum(t_hi, far)
    chord = np.maximum(0.0, t_hi - t_lo)
    return chord * seg_len


def raycast_occlusion(agents, grid: GridSpec) -> np.ndarray:
    """1 = visible from the sensor origin, 0 = shadowed by an agent box."""
    px, py = grid.pixel_centers()
    visible = np.ones((grid.height_px, grid.width_px), dtype=np.uint8)
    tau = grid.meters_per_px
    for agent in agents:
        box = agent.box if hasattr(agent, "box") else agent
        pen = segment_box_penetration(grid.sensor_origin, px, py, box)
        visible[pen > tau] = 0
    return visible


# ---------------------------------------------------------------------------
# positional encoding


@lru_cache(maxsize=8)
def _pos_enc_cached(height_px, anchor_row, meters_per_px, d_model):
    pos = (anchor_row - np.arange(height_px, dtype=np.float64)) * meters_per_px
    i = np.arange(d_model // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * i / d_model)
    ang = pos[:, None] * freq[None, :]
    enc = np.empty((height_px, d_model))
    enc[:, 0::2] = np.sin(ang)
    enc[:, 1::2] = np.cos(ang)
    enc.setflags(write=False)
    return enc


def positional_encoding(grid: GridSpec, spec: PosEncSpec) -> np.ndarray:
    """(H, W, d_model) sinusoids of forward distance; constant per row."""
    rows = _pos_enc_cached(grid.height_px, grid.ego_anchor[0], grid.meters_per_px, spec.d_model)
    return np.broadcast_to(rows[:, None, :], (grid.height_px, grid.width_px, spec.d_model)).copy()


# ---------------------------------------------------------------------------
# stack assembly and debug renders


def build_stack(scene: SceneState, grid: GridSpec, spec: PosEncSpec) -> RasterStack:
    """Compose all channels; the scene must already be in the ego frame."""
    if scene.road.empty:
        free = np.zeros((grid.height_px, grid.width_px), dtype=np.uint8)
        way = np.zeros_like(free)
        grid = replace(grid, meta=grid.meta + (("road_missing", True),))
    else:
        free, way = rasterize_road(scene.road, grid)
    return RasterStack(
        grid=grid,
        freespace=free,
        waypoints=way,
        vehicles=rasterize_vehicles(scene.agents, grid),
        occlusion=raycast_occlusion(scene.agents, grid),
        pos_enc=positional_encoding(grid, spec),
    )


def write_pgm(path, channel: np.ndarray) -> None:
    """Binary PGM (P5); float channels are expected in [-1, 1]."""
    if channel.dtype == np.uint8:
        img = channel * np.uint8(255)
    else:
        img = np.clip((channel + 1.0) * 127.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm_composite(path, stack: RasterStack) -> None:
    """RGB overview: road green, vehicles red, shadow dims everything."""
    h, w = stack.freespace.shape
    img = np.zeros((h, w, 3), dtype=np.float64)
    img[..., 1] = 0.45 * stack.freespace
    img[..., 0] = np.maximum(img[..., 0], 0.9 * stack.vehicles)
    img[..., 2] = 0.9 * stack.waypoints
    img *= (0.35 + 0.65 * stack.occlusion)[..., None]
    out = np.clip(img * 255, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(out.tobytes())


def write_stack_pgms(stack: RasterStack, directory, prefix="channel") -> list:
    """One PGM per channel; returns the written paths."""
    import os

    paths = []
    named = [("freespace", stack.freespace), ("waypoints", stack.waypoints),
             ("vehicles", stack.vehicles), ("occlusion", stack.occlusion)]
    for name, chan in named:
        p = os.path.join(directory, f"{prefix}_{name}.pgm")
        write_pgm(p, chan)
        paths.append(p)
    for k in range(stack.pos_enc.shape[2]):
        p = os.path.join(directory, f"{prefix}_posenc_{k:02d}.pgm")
        write_pgm(p, stack.pos_enc[:, :, k])
        paths.append(p)
    return paths
