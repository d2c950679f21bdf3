"""Detection-matching evaluation: rotated IoU, greedy matching, PR curves,
average precision and max recall at box overlaps 0.5 / 0.7.

Evaluation is single class; "mAP" is kept as the report field name even
though it equals AP here.  Detections are duck-typed: anything with a
``box`` (OrientedBox) and ``score`` works.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .scene import OrientedBox

OVERLAPS = (0.5, 0.7)


# ---------------------------------------------------------------------------
# rotated IoU via convex clipping


def _polygon_area(pts) -> float:
    x = [p[0] for p in pts]
    y = [p[1] for p in pts]
    n = len(pts)
    return 0.5 * sum(x[i] * y[(i + 1) % n] - x[(i + 1) % n] * y[i] for i in range(n))


def _clip(subject, cx, cy, nx, ny):
    # keep the half-plane (p - c) . n >= 0
    out = []
    n = len(subject)
    for i in range(n):
        px, py = subject[i]
        qx, qy = subject[(i + 1) % n]
        dp = (px - cx) * nx + (py - cy) * ny
        dq = (qx - cx) * nx + (qy - cy) * ny
        if dp >= 0:
            out.append((px, py))
        if (dp >= 0) != (dq >= 0):
            t = dp / (dp - dq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
    return out


def iou_rotated(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two oriented boxes (Sutherland-Hodgman).

    The operand order is canonicalized first, which makes the result
    exactly symmetric despite floating-point clipping.
    """
    ka = (a.cx, a.cy, a.w, a.l, a.yaw)
    kb = (b.cx, b.cy, b.w, b.l, b.yaw)
    if kb < ka:
        a, b = b, a
    pa = [tuple(p) for p in a.corners()]
    pb = [tuple(p) for p in b.corners()]
    if _polygon_area(pb) < 0:
        pb = pb[::-1]
    poly = pa
    m = len(pb)
    for i in range(m):
        if not poly:
            break
        cx, cy = pb[i]
        qx, qy = pb[(i + 1) % m]
        ex, ey = qx - cx, qy - cy
        # inward normal of a CCW clipper edge
        poly = _clip(poly, cx, cy, -ey, ex)
    if len(poly) < 3:
        return 0.0
    inter = abs(_polygon_area(poly))
    if inter < 1e-12:
        return 0.0
    union = a.w * a.l + b.w * b.l - inter
    return inter / union


# ---------------------------------------------------------------------------
# matching


def match_greedy(preds, gts, iou_threshold: float):
    """Greedy score-descending matching against unmatched ground truth.

    Returns (tp_pairs, fp_indices, fn_indices) where tp_pairs are
    (pred_index, gt_index, iou) tuples; score ties keep input order.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    tp, fp = [], []
    for pi in order:
        box = preds[pi].box
        best_iou, best_gi = 0.0, -1
        for gi, gt in enumerate(gts):
            if taken[gi]:
                continue
            # cheap circumradius reject before exact clipping
            r = 0.5 * (np.hypot(box.w, box.l) + np.hypot(gt.w, gt.l))
            if np.hypot(box.cx - gt.cx, box.cy - gt.cy) > r:
                continue
            iou = iou_rotated(box, gt)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0 and best_iou >= iou_threshold:
            taken[best_gi] = True
            tp.append((pi, best_gi, best_iou))
        else:
            fp.append(pi)
    fn = [gi for gi, t in enumerate(taken) if not t]
    return tp, fp, fn


# ---------------------------------------------------------------------------
# PR curves and scalar summaries


@dataclass(frozen=True)
class PrPoint:
    score_threshold: float
    precision: float
    recall: float


def _pooled_labels(preds_by_scene: dict, gts_by_scene: dict, iou_threshold: float):
    """Flat (score, is_tp) labels over the corpus, plus total gt count.

    Greedy matching processes predictions in descending score order, so a
    prediction's outcome only depends on higher-scored ones; labels from a
    single full matching therefore agree with re-matching any score-filtered
    subset.
    """
    labels = []
    total_gt = 0
    for sid in sorted(gts_by_scene.keys()):
        gts = gts_by_scene[sid]
        preds = preds_by_scene.get(sid, [])
        total_gt += len(gts)
        tp, fp, _ = match_greedy(preds, gts, iou_threshold)
        for pi, _, _ in tp:
            labels.append((preds[pi].score, True))
        for pi in fp:
            labels.append((preds[pi].score, False))
    return labels, total_gt


def pr_curve(preds_by_scene: dict, gts_by_scene: dict, iou_threshold: float) -> list:
    """One PrPoint per distinct score threshold (descending sweep)."""
    labels, total_gt = _pooled_labels(preds_by_scene, gts_by_scene, iou_threshold)
    if not labels:
        return []
    labels.sort(key=lambda st: -st[0])
    points = []
    tp_cum = 0
    k = 0
    n = len(labels)
    for i, (score, is_tp) in enumerate(labels):
        tp_cum += is_tp
        k += 1
        if i + 1 < n and labels[i + 1][0] == score:
            continue  # more predictions share this threshold
        precision = tp_cum / k
        recall = tp_cum / total_gt if total_gt else 0.0
        points.append(PrPoint(score_threshold=score, precision=precision, recall=recall))
    return points


def average_precision(curve) -> float:
    """Area under the precision envelope vs recall (all-point interpolation)."""
    if not curve:
        return 0.0
    pts = sorted(curve, key=lambda p: p.recall)
    rec = [0.0] + [p.recall for p in pts]
    pre = [0.0] + [p.precision for p in pts]
    for i in range(len(pre) - 2, -1, -1):
        pre[i] = max(pre[i], pre[i + 1])
    ap = 0.0
    for i in range(1, len(rec)):
        ap += (rec[i] - rec[i - 1]) * pre[i]
    return ap


def max_recall(curve) -> float:
    if not curve:
        return 0.0
    return max(p.recall for p in curve)


# ---------------------------------------------------------------------------
# corpus-level report


@dataclass
class EvalReport:
    map_050: float
    map_070: float
    maxr_050: float
    maxr_070: float
    precision_at_fixed: float
    recall_at_fixed: float
    fixed_threshold: float
    counts: dict  # {"tp": int, "fp": int, "fn": int} at fixed threshold, overlap 0.5
    pr_curves: dict = field(default_factory=dict)  # overlap -> list[PrPoint]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "map_050": self.map_050,
            "map_070": self.map_070,
            "maxr_050": self.maxr_050,
            "maxr_070": self.maxr_070,
            "precision_at_fixed": self.precision_at_fixed,
            "recall_at_fixed": self.recall_at_fixed,
            "fixed_threshold": self.fixed_threshold,
            "counts": self.counts,
            "pr_curves": {
                str(ov): [[p.score_threshold, p.precision, p.recall] for p in pts]
                for ov, pts in self.pr_curves.items()
            },
            "meta": self.meta,
        }
        return d

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def evaluate_detections(preds_by_scene: dict, targets_by_scene: dict,
                        fixed_threshold: float = 0.5, meta: dict | None = None) -> EvalReport:
    """Full report; scene-id sets of the two sides must coincide."""
    pk, tk = set(preds_by_scene.keys()), set(targets_by_scene.keys())
    if pk != tk:
        diff = sorted(pk.symmetric_difference(tk))
        raise ValueError(f"scene-id mismatch between predictions and targets: {diff}")
    curves = {ov: pr_curve(preds_by_scene, {s: [d.box for d in targets_by_scene[s]]
                                            for s in targets_by_scene}, ov)
              for ov in OVERLAPS}
    tp = fp = fn = 0
    for sid in sorted(targets_by_scene.keys()):
        kept = [d for d in preds_by_scene[sid] if d.score >= fixed_threshold]
        t, f_, n_ = match_greedy(kept, [d.box for d in targets_by_scene[sid]], 0.5)
        tp += len(t)
        fp += len(f_)
        fn += len(n_)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return EvalReport(
        map_050=average_precision(curves[0.5]),
        map_070=average_precision(curves[0.7]),
        maxr_050=max_recall(curves[0.5]),
        maxr_070=max_recall(curves[0.7]),
        precision_at_fixed=precision,
        recall_at_fixed=recall,
        fixed_threshold=fixed_threshold,
        counts={"tp": tp, "fp": fp, "fn": fn},
        pr_curves=curves,
        meta=meta or {},
    )


def evaluate(pred_path, target_path, fixed_threshold: float = 0.5) -> EvalReport:
    """File-based evaluation over the shared detections JSONL format."""
    from .imitator import load_detections

    preds = load_detections(pred_path)
    targets = load_detections(target_path)
    return evaluate_detections(preds, targets, fixed_threshold,
                               meta={"pred_file": str(pred_path), "target_file": str(target_path)})
