"""Training objectives for the imitator.

Total = alpha*BCE + beta*masked-smooth-L1 + gamma*corner + omega1*MMD(box)
+ omega2*MMD(error) + lambda*||w||^2.  The MMD pair compares regression
values (and their residuals against annotation maps) between the model
and the target across map pixels with a Gaussian kernel.

Corner positions are computed from the raw (sin, cos) regression channels
used directly as rotation entries, so non-unit pairs inflate the corners
and are penalized implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .imitator import HeadMaps, cell_centers
from .metrics import iou_rotated
from .scene import OrientedBox

SMOOTH_L1_TRANSITION = 1.0


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.001
    alpha: float = 2.0
    beta: float = 0.01
    gamma: float = 10.0
    omega1: float = 0.005
    omega2: float = 0.001
    kernel_sigma: float = 1.0

    def __post_init__(self):
        for name in ("lam", "alpha", "beta", "gamma", "omega1", "omega2", "kernel_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights.{name} must be nonnegative")


@dataclass
class LossReport:
    l_total: float
    l_cls: float
    l_reg: float
    l_corner: float
    l_mmd_box: float
    l_mmd_err: float
    l_weight_reg: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "l_total": self.l_total, "l_cls": self.l_cls, "l_reg": self.l_reg,
            "l_corner": self.l_corner, "l_mmd_box": self.l_mmd_box,
            "l_mmd_err": self.l_mmd_err, "l_weight_reg": self.l_weight_reg,
            "meta": self.meta,
        }


# ---------------------------------------------------------------------------
# classification / regression terms


def bce(x_cls, y_cls) -> nm.Tensor:
    """Mean binary cross entropy; predictions clamped to [1e-7, 1-1e-7]."""
    x = nm.as_tensor(x_cls)
    y = np.asarray(y_cls, dtype=np.float64)
    if x.size != y.size:
        raise ValueError(f"bce shape mismatch: {x.shape} vs {y.shape}")
    x = nm.clip(nm.reshape(x, y.shape), 1e-7, 1.0 - 1e-7)
    term = nm.add(nm.mul(nm.log(x), y), nm.mul(nm.log(nm.sub(1.0, x)), 1.0 - y))
    return nm.mul(nm.reduce_mean(term), -1.0)


def smooth_l1_masked(x_reg, y_reg, y_cls) -> nm.Tensor:
    """Smooth-L1 of the positive-cell regression error, averaged per cell.

    ``x_reg`` is channel-first (1, 6, H', W'); ``y_reg`` is (H', W', 6) and
    ``y_cls`` (H', W') as produced by the target encoder.
    """
    x = nm.as_tensor(x_reg)
    y = np.asarray(y_reg, dtype=np.float64)
    mask = np.asarray(y_cls, dtype=np.float64)
    y_cf = y.transpose(2, 0, 1)[None]
    if x.shape != y_cf.shape:
        raise ValueError(f"smooth_l1_masked shape mismatch: {x.shape} vs {y_cf.shape}")
    n_pos = int(np.sum(mask == 1.0))
    if n_pos == 0:
        return nm.Tensor(0.0)
    diff = nm.mul(nm.sub(x, y_cf), mask[None, None])
    return nm.mul(nm.reduce_sum(nm.smooth_l1(diff, SMOOTH_L1_TRANSITION)), 1.0 / n_pos)


# ---------------------------------------------------------------------------
# corner term

_CORNER_SIGNS = ((1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0))


def _corner_core(dx, dy, lw, ll, sn, cs, cell_x, cell_y, target_corners) -> nm.Tensor:
    """Mean over matched pairs of summed smooth-L1 corner distances."""
    n = target_corners.shape[0]
    cx = nm.add(dx, cell_x)
    cy = nm.add(dy, cell_y)
    hw = nm.mul(nm.exp(lw), 0.5)
    hl = nm.mul(nm.exp(ll), 0.5)
    total = nm.Tensor(0.0)
    for k, (a, b) in enumerate(_CORNER_SIGNS):
        px = nm.add(cx, nm.sub(nm.mul(nm.mul(hl, cs), a), nm.mul(nm.mul(hw, sn), b)))
        py = nm.add(cy, nm.add(nm.mul(nm.mul(hl, sn), a), nm.mul(nm.mul(hw, cs), b)))
        ex = nm.sub(px, target_corners[:, k, 0])
        ey = nm.sub(py, target_corners[:, k, 1])
        dist = nm.sqrt(nm.add(nm.add(nm.square(ex), nm.square(ey)), 1e-24))
        total = nm.add(total, nm.reduce_sum(nm.smooth_l1(dist, SMOOTH_L1_TRANSITION)))
    return nm.mul(total, 1.0 / n)


def match_for_corner_loss(pred_boxes, pred_scores, target_boxes, iou_threshold: float = 0.5):
    """Greedy score-descending matching; each target used at most once."""
    order = sorted(range(len(pred_boxes)), key=lambda i: (-pred_scores[i], i))
    taken = [False] * len(target_boxes)
    matches = []
    for pi in order:
        best_iou, best_ti = 0.0, -1
        pb = pred_boxes[pi]
        for ti, tb in enumerate(target_boxes):
            if taken[ti]:
                continue
            if math.hypot(pb.cx - tb.cx, pb.cy - tb.cy) > \
                    0.5 * (math.hypot(pb.w, pb.l) + math.hypot(tb.w, tb.l)):
                continue
            iou = iou_rotated(pb, tb)
            if iou > best_iou:
                best_iou, best_ti = iou, ti
        if best_ti >= 0 and best_iou >= iou_threshold:
            taken[best_ti] = True
            matches.append((pi, best_ti))
    return matches


def _box_params(box: OrientedBox) -> np.ndarray:
    return np.array([box.cx, box.cy, math.log(box.w), math.log(box.l),
                     math.sin(box.yaw), math.cos(box.yaw)])


def corner_loss(pred_boxes, target_boxes, matching) -> float:
    """Box-level corner loss over an explicit matching; 0 when unmatched."""
    if not matching:
        return 0.0
    params = np.stack([_box_params(pred_boxes[pi]) for pi, _ in matching])
    targets = np.stack([target_boxes[ti].corners() for _, ti in matching])
    cols = [nm.Tensor(params[:, k]) for k in range(6)]
    zeros = np.zeros(len(matching))
    with nm.no_grad():
        out = _corner_core(*cols, zeros, zeros, targets)
    return out.item()


def corner_loss_from_maps(x_reg, x_cls_data, grid, downsample, target_boxes,
                          score_threshold: float, iou_threshold: float = 0.5):
    """Differentiable corner loss on the regression tensor.

    Decodes boxes at active cells of the (detached) classification map,
    matches them greedily to the target boxes, then rebuilds the matched
    corners from the live regression channels.  Returns (loss, n_matched).
    """
    cls = np.asarray(x_cls_data)
    reg = x_reg.data[0].transpose(1, 2, 0)
    hp, wp = cls.shape
    cx_map, cy_map = cell_centers(grid, downsample)
    rr, cc = np.nonzero(cls >= score_threshold)
    boxes, scores, cells = [], [], []
    for i, j in zip(rr.tolist(), cc.tolist()):
        dx, dy, lw, ll, sn, cs = reg[i, j]
        if not np.all(np.isfinite(reg[i, j])):
            raise ValueError(f"non-finite regression under active cell ({i}, {j})")
        try:
            boxes.append(OrientedBox(cx_map[i, j] + dx, cy_map[i, j] + dy,
                                     math.exp(lw), math.exp(ll), math.atan2(sn, cs)))
        except OverflowError:
            raise ValueError(f"non-finite decoded box under active cell ({i}, {j})") from None
        scores.append(float(cls[i, j]))
        cells.append((i, j))
    matches = match_for_corner_loss(boxes, scores, target_boxes, iou_threshold)
    if not matches:
        return nm.Tensor(0.0), 0
    plane = hp * wp
    flat = np.array([cells[pi][0] * wp + cells[pi][1] for pi, _ in matches])
    cols = [nm.take_flat(x_reg, k * plane + flat) for k in range(6)]
    cell_x = np.array([cx_map[cells[pi][0], cells[pi][1]] for pi, _ in matches])
    cell_y = np.array([cy_map[cells[pi][0], cells[pi][1]] for pi, _ in matches])
    targets = np.stack([target_boxes[ti].corners() for _, ti in matches])
    return _corner_core(*cols, cell_x, cell_y, targets), len(matches)


# ---------------------------------------------------------------------------
# maximum mean discrepancy


def _pair_kernel_sum(a, b, inv_two_sigma_sq: float) -> nm.Tensor:
    at = nm.reshape(nm.as_tensor(a), (-1, 1))
    bt = nm.reshape(nm.as_tensor(b), (1, -1))
    d = nm.sub(at, bt)
    return nm.reduce_sum(nm.exp(nm.mul(nm.square(d), -inv_two_sigma_sq)))


def _as_channels(x):
    """Channel-major view: (C, n) from (n,) or (C, n) input."""
    t = nm.as_tensor(x)
    if t.data.ndim == 1:
        return [t]
    if t.data.ndim == 2:
        return [nm.take_flat(t, np.arange(t.shape[1]) + c * t.shape[1])
                for c in range(t.shape[0])] if t.requires_grad else \
            [nm.Tensor(t.data[c]) for c in range(t.shape[0])]
    raise ValueError(f"mmd2 expects (n,) or (C, n) maps, got shape {t.shape}")


def mmd2(x, y, z, kernel_sigma: float = 1.0, weights=(1.0, 1.0)):
    """Two MMD^2 statistics between regression maps, summed over channels.

    The first compares model values against target values; the second
    compares their residuals to the annotation map ``z``.  Biased
    estimators with a Gaussian kernel; tiny negative rounding is clamped
    at zero.  Returns (box_term, err_term) scaled by ``weights``.
    """
    xs, ys, zs = _as_channels(x), _as_channels(y), _as_channels(z)
    if not (len(xs) == len(ys) == len(zs)):
        raise ValueError("mmd2 channel counts differ")
    inv = 1.0 / (2.0 * kernel_sigma * kernel_sigma)
    m_box = nm.Tensor(0.0)
    m_err = nm.Tensor(0.0)
    for xc, yc, zc in zip(xs, ys, zs):
        n = xc.shape[0]
        if n != yc.shape[0] or n != zc.shape[0]:
            raise ValueError("mmd2 pixel counts differ")
        scale = 1.0 / (n * n)
        kxx = _pair_kernel_sum(xc, xc, inv)
        kyy = _pair_kernel_sum(yc, yc, inv)
        kxy = _pair_kernel_sum(xc, yc, inv)
        m_box = nm.add(m_box, nm.mul(
            nm.add(nm.add(kxx, kyy), nm.mul(kxy, -2.0)), scale))
        ex = nm.sub(xc, zc)
        ey = nm.sub(yc, zc)
        kee_x = _pair_kernel_sum(ex, ex, inv)
        kee_y = _pair_kernel_sum(ey, ey, inv)
        kee_xy = _pair_kernel_sum(ex, ey, inv)
        m_err = nm.add(m_err, nm.mul(
            nm.add(nm.add(kee_x, kee_y), nm.mul(kee_xy, -2.0)), scale))
    return nm.mul(nm.relu(m_box), weights[0]), nm.mul(nm.relu(m_err), weights[1])


# ---------------------------------------------------------------------------
# total objective


def total_loss(x_cls, x_reg, y_maps: HeadMaps, z_maps: HeadMaps, params: dict,
               weights: LossWeights, grid, downsample: int,
               score_threshold: float = 0.5, mmd_all_pixels: bool = False):
    """Weighted sum of all terms; returns (scalar tensor, LossReport)."""
    from .imitator import decode

    l_cls = bce(x_cls, y_maps.cls)
    l_reg = smooth_l1_masked(x_reg, y_maps.reg, y_maps.cls)

    target_boxes = [d.box for d in decode(y_maps, grid, downsample, 0.5)]
    l_corner, n_matched = corner_loss_from_maps(
        x_reg, x_cls.data.reshape(y_maps.cls.shape), grid, downsample,
        target_boxes, score_threshold)

    hp, wp = y_maps.cls.shape
    plane = hp * wp
    if mmd_all_pixels:
        mask_flat = np.arange(plane)
    else:
        mask_flat = np.nonzero(((y_maps.cls == 1.0) | (z_maps.cls == 1.0)).reshape(-1))[0]
    if mask_flat.size:
        xv = [nm.take_flat(x_reg, k * plane + mask_flat) for k in range(6)]
        yv = y_maps.reg.reshape(plane, 6)[mask_flat].T
        zv = z_maps.reg.reshape(plane, 6)[mask_flat].T
        m_box, m_err = mmd2_channels(xv, yv, zv, weights.kernel_sigma)
    else:
        m_box = nm.Tensor(0.0)
        m_err = nm.Tensor(0.0)

    l_wreg = nm.Tensor(0.0)
    for p in params.values():
        l_wreg = nm.add(l_wreg, nm.reduce_sum(nm.square(p)))

    total = nm.add(
        nm.add(nm.add(nm.mul(l_cls, weights.alpha), nm.mul(l_reg, weights.beta)),
               nm.add(nm.mul(l_corner, weights.gamma), nm.mul(m_box, weights.omega1))),
        nm.add(nm.mul(m_err, weights.omega2), nm.mul(l_wreg, weights.lam)))

    terms = {"l_cls": l_cls, "l_reg": l_reg, "l_corner": l_corner,
             "l_mmd_box": m_box, "l_mmd_err": m_err, "l_weight_reg": l_wreg,
             "l_total": total}
    values = {}
    for name, t in terms.items():
        v = t.item()
        if not math.isfinite(v):
            raise ValueError(f"loss term {name!r} is non-finite")
        values[name] = v
    report = LossReport(
        l_total=values["l_total"], l_cls=values["l_cls"], l_reg=values["l_reg"],
        l_corner=values["l_corner"], l_mmd_box=values["l_mmd_box"],
        l_mmd_err=values["l_mmd_err"], l_weight_reg=values["l_weight_reg"],
        meta={
            "smooth_l1_transition": SMOOTH_L1_TRANSITION,
            "mmd_mask": "all_pixels" if mmd_all_pixels else "positive_union",
            "mmd_pixels": int(mask_flat.size),
            "n_positive_cells": int(np.sum(y_maps.cls == 1.0)),
            "n_corner_matches": n_matched,
            "no_matches": n_matched == 0,
            "score_threshold": score_threshold,
        },
    )
    return total, report


def mmd2_channels(x_channels, y_arr, z_arr, kernel_sigma: float):
    """mmd2 over pre-gathered per-channel tensors (training fast path)."""
    inv = 1.0 / (2.0 * kernel_sigma * kernel_sigma)
    m_box = nm.Tensor(0.0)
    m_err = nm.Tensor(0.0)
    for k, xc in enumerate(x_channels):
        n = xc.shape[0]
        scale = 1.0 / (n * n)
        yc = nm.Tensor(y_arr[k])
        zc = nm.Tensor(z_arr[k])
        kxx = _pair_kernel_sum(xc, xc, inv)
        kyy = _pair_kernel_sum(yc, yc, inv)
        kxy = _pair_kernel_sum(xc, yc, inv)
        m_box = nm.add(m_box, nm.mul(nm.add(nm.add(kxx, kyy), nm.mul(kxy, -2.0)), scale))
        ex = nm.sub(xc, zc)
        ey = nm.sub(yc, zc)
        kex = _pair_kernel_sum(ex, ex, inv)
        key_ = _pair_kernel_sum(ey, ey, inv)
        kxy_e = _pair_kernel_sum(ex, ey, inv)
        m_err = nm.add(m_err, nm.mul(nm.add(nm.add(kex, key_), nm.mul(kxy_e, -2.0)), scale))
    return nm.relu(m_box), nm.relu(m_err)
