"""Comparison perception sources.

The target proxy is the desk-scale stand-in for a real detector: it keeps
each annotated vehicle with a probability that decays with distance and
with how occluded the agent is, perturbs kept boxes, and injects spurious
detections in free space.  The Gaussian and Multimodal baselines add
noise to annotation boxes and drop them at a fixed false-negative ratio.
Every operation is a pure function of (input, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imitator import Detection
from .metrics import match_greedy
from .raster import GridSpec, segment_box_penetration
from .scene import OrientedBox, SceneState, normalize_yaw
from .seeding import rng_for


@dataclass(frozen=True)
class GaussianNoiseSpec:
    sigma: float = 0.1
    fn_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not (0.0 <= self.fn_ratio <= 1.0):
            raise ValueError("fn_ratio must lie in [0, 1]")


@dataclass(frozen=True)
class TargetProxySpec:
    """Behavior of the emulated target perceiver.

    ``dist_curve`` and ``occlusion_curve`` are piecewise-linear breakpoints
    (x, value); the keep probability is their product.  The occlusion
    coordinate is the fraction of an agent's corner/center sample points
    whose sight line is blocked by another agent.
    """

    dist_curve: tuple = ((0.0, 1.0), (18.0, 1.0), (30.0, 0.05))
    occlusion_curve: tuple = ((0.0, 1.0), (0.4, 0.9), (1.0, 0.15))
    noise: tuple = (0.10, 0.10, 0.04, 0.06, 0.02)  # (cx, cy, w, l, yaw)
    fp_rate: float = 0.1
    score_base: float = 0.98
    score_slope: float = 0.012  # score drop per meter of distance
    score_jitter: float = 0.02
    score_floor: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for x, p in tuple(self.dist_curve) + tuple(self.occlusion_curve):
            if not (0.0 <= p <= 1.0):
                raise ValueError("curve probabilities must lie in [0, 1]")


def piecewise_linear(curve, x: float) -> float:
    xs = [p[0] for p in curve]
    ys = [p[1] for p in curve]
    return float(np.interp(x, xs, ys))


def occluded_fractions(agents, sensor_origin=(0.0, 0.0), tau: float = 0.5) -> list:
    """Per agent: fraction of its 4 corners + center hidden behind others."""
    out = []
    for i, agent in enumerate(agents):
        pts = np.vstack([agent.box.corners(), [[agent.box.cx, agent.box.cy]]])
        blocked = np.zeros(len(pts), dtype=bool)
        for j, other in enumerate(agents):
            if i == j:
                continue
            pen = segment_box_penetration(sensor_origin, pts[:, 0], pts[:, 1], other.box)
            blocked |= pen > tau
        out.append(float(blocked.mean()))
    return out


def _perturbed_box(box: OrientedBox, noise, rng) -> OrientedBox:
    s_cx, s_cy, s_w, s_l, s_yaw = noise
    return OrientedBox(
        cx=(box.cx + rng.normal(0.0, s_cx)) if s_cx else box.cx,
        cy=(box.cy + rng.normal(0.0, s_cy)) if s_cy else box.cy,
        w=max(0.2, box.w + rng.normal(0.0, s_w)) if s_w else box.w,
        l=max(0.2, box.l + rng.normal(0.0, s_l)) if s_l else box.l,
        yaw=normalize_yaw(box.yaw + rng.normal(0.0, s_yaw)) if s_yaw else box.yaw,
    )


def target_proxy_perceive(scene: SceneState, grid: GridSpec, spec: TargetProxySpec,
                          scene_id: int = 0) -> list:
    """Deterministic-for-seed detections for one ego-frame scene."""
    rng = rng_for(spec.seed, "target-proxy", scene_id)
    vehicles = [a for a in scene.agents if a.kind == "vehicle"]
    occ = occluded_fractions(vehicles, grid.sensor_origin, grid.meters_per_px)
    dets = []
    for agent, frac in zip(vehicles, occ):
        d = math.hypot(agent.box.cx, agent.box.cy)
        keep_p = piecewise_linear(spec.dist_curve, d) * piecewise_linear(spec.occlusion_curve, frac)
        u = rng.random()
        noise_draw = _perturbed_box(agent.box, spec.noise, rng)
        score = spec.score_base - spec.score_slope * d + rng.normal(0.0, spec.score_jitter)
        if u >= keep_p:
            continue
        dets.append(Detection(box=noise_draw,
                              score=float(np.clip(score, spec.score_floor, 0.999))))
    n_fp = int(rng.poisson(spec.fp_rate))
    for _ in range(n_fp):
        box = _sample_freespace_box(scene, rng)
        if box is None:
            continue
        d = math.hypot(box.cx, box.cy)
        score = spec.score_floor + abs(rng.normal(0.0, 0.15))
        dets.append(Detection(box=box, score=float(np.clip(score, spec.score_floor, 0.8))))
    return dets


def _sample_freespace_box(scene: SceneState, rng, tries: int = 20):
    polys = scene.road.freespace
    if not polys:
        return None
    for _ in range(tries):
        poly = polys[int(rng.integers(len(polys)))]
        xs, ys = poly[:, 0], poly[:, 1]
        x = float(rng.uniform(xs.min(), xs.max()))
        y = float(rng.uniform(ys.min(), ys.max()))
        if _point_in_polygon(poly, x, y):
            return OrientedBox(cx=x, cy=y,
                               w=float(rng.uniform(1.5, 2.2)),
                               l=float(rng.uniform(3.2, 5.0)),
                               yaw=float(rng.uniform(-math.pi, math.pi)))
    return None


def _point_in_polygon(poly: np.ndarray, x: float, y: float) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y) and x < (x2 - x1) * (y - y1) / (y2 - y1) + x1:
            inside = not inside
    return inside


# ---------------------------------------------------------------------------
# Gaussian baseline


def gaussian_baseline(annotation_boxes, spec: GaussianNoiseSpec, scene_id: int = 0) -> list:
    """Noise on the 6-channel box representation, then i.i.d. FN dropping.

    Baseline detections carry score 1.0 (no score sweep is meaningful for
    them, mirroring how annotation-derived sources are evaluated).
    """
    rng = rng_for(spec.seed, "gaussian-baseline", scene_id)
    out = []
    for box in annotation_boxes:
        box = box.box if hasattr(box, "box") else box
        rep = np.array([box.cx, box.cy, math.log(box.w), math.log(box.l),
                        math.sin(box.yaw), math.cos(box.yaw)])
        rep = rep + rng.normal(0.0, spec.sigma, size=6)
        noisy = OrientedBox(cx=rep[0], cy=rep[1], w=math.exp(rep[2]), l=math.exp(rep[3]),
                            yaw=normalize_yaw(math.atan2(rep[4], rep[5])))
        drop = rng.random() < spec.fn_ratio
        if not drop:
            out.append(Detection(box=noisy, score=1.0))
    return out


# ---------------------------------------------------------------------------
# mixture-of-Gaussians baseline


@dataclass(frozen=True)
class GmmModel:
    """Diagonal-covariance mixture over (dcx, dcy, dw, dl, dyaw) residuals."""

    weights: tuple
    means: tuple  # K x 5
    variances: tuple  # K x 5

    def __post_init__(self):
        w = np.asarray(self.weights)
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("GMM weights must sum to 1")
        if np.any(np.asarray(self.variances) <= 0):
            raise ValueError("GMM variances must be positive")

    @property
    def k(self) -> int:
        return len(self.weights)

    def sample(self, rng) -> np.ndarray:
        comp = int(rng.choice(self.k, p=np.asarray(self.weights)))
        mean = np.asarray(self.means[comp])
        std = np.sqrt(np.asarray(self.variances[comp]))
        return mean + rng.normal(size=5) * std

    def to_dict(self) -> dict:
        return {"weights": list(self.weights),
                "means": [list(m) for m in self.means],
                "variances": [list(v) for v in self.variances]}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(weights=tuple(d["weights"]),
                   means=tuple(tuple(m) for m in d["means"]),
                   variances=tuple(tuple(v) for v in d["variances"]))


def _log_gauss_diag(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    return -0.5 * (np.sum(np.log(2.0 * np.pi * var))
                   + np.sum((x - mean) ** 2 / var, axis=1))


def fit_gmm_em(residuals, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-6,
               return_history: bool = False):
    """EM for a diagonal GMM; returns (model, final log-likelihood).

    Means seed with distance-weighted (k-means++ style) picks; a component
    that degenerates (weight < 1e-6 or collapsed variance) is re-seeded
    once, then fitting fails.  ``return_history`` appends the per-iteration
    log-likelihood sequence to the return tuple.
    """
    x = np.asarray(residuals, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("residuals must be (N, D)")
    n, d = x.shape
    if len(np.unique(x, axis=0)) < k:
        raise ValueError(f"need at least {k} distinct residuals, got fewer")
    rng = rng_for(seed, "gmm-em")

    means = np.empty((k, d))
    means[0] = x[rng.integers(n)]
    for i in range(1, k):
        d2 = np.min(((x[:, None, :] - means[None, :i, :]) ** 2).sum(-1), axis=1)
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        means[i] = x[rng.choice(n, p=probs)]
    var0 = np.maximum(x.var(axis=0), 1e-8)
    variances = np.tile(var0, (k, 1))
    weights = np.full(k, 1.0 / k)

    reseeded = set()
    prev_ll = -np.inf
    ll = prev_ll
    history = []
    for _ in range(max_iter):
        # E step
        logp = np.stack([np.log(weights[j]) + _log_gauss_diag(x, means[j], variances[j])
                         for j in range(k)], axis=1)
        mx = logp.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
        resp = np.exp(logp - lse[:, None])
        ll = float(lse.sum())
        history.append(ll)
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
        # M step
        nk = resp.sum(axis=0)
        degenerate = [j for j in range(k) if nk[j] < 1e-6 * n]
        for j in range(k):
            if j in degenerate:
                continue
            means[j] = (resp[:, j:j + 1] * x).sum(axis=0) / nk[j]
            variances[j] = (resp[:, j:j + 1] * (x - means[j]) ** 2).sum(axis=0) / nk[j]
            if np.any(variances[j] < 1e-12):
                degenerate.append(j)
        weights = np.maximum(nk / n, 0.0)
        weights /= weights.sum()
        for j in degenerate:
            if j in reseeded:
                raise RuntimeError(f"GMM component {j} degenerated twice; cannot fit")
            reseeded.add(j)
            means[j] = x[rng.integers(n)]
            variances[j] = var0
            weights = np.full(k, 1.0 / k)
            prev_ll = -np.inf
    model = GmmModel(weights=tuple(weights.tolist()),
                     means=tuple(tuple(m) for m in means.tolist()),
                     variances=tuple(tuple(v) for v in variances.tolist()))
    if return_history:
        return model, ll, history
    return model, ll


def multimodal_baseline(annotation_boxes, model: GmmModel, fn_ratio: float,
                        seed: int, scene_id: int = 0) -> list:
    """Sample a residual from the mixture per box, apply, drop at fn_ratio."""
    rng = rng_for(seed, "multimodal-baseline", scene_id)
    out = []
    for box in annotation_boxes:
        box = box.box if hasattr(box, "box") else box
        dcx, dcy, dw, dl, dyaw = model.sample(rng)
        noisy = OrientedBox(cx=box.cx + dcx, cy=box.cy + dcy,
                            w=max(0.2, box.w + dw), l=max(0.2, box.l + dl),
                            yaw=normalize_yaw(box.yaw + dyaw))
        drop = rng.random() < fn_ratio
        if not drop:
            out.append(Detection(box=noisy, score=1.0))
    return out


# ---------------------------------------------------------------------------
# fitting helpers against a perception source


def collect_residuals(annotations_by_scene: dict, dets_by_scene: dict,
                      iou_threshold: float = 0.5):
    """(N, 5) residuals of matched detections and the measured FN ratio."""
    rows = []
    matched = 0
    total = 0
    for sid, ann in annotations_by_scene.items():
        dets = dets_by_scene.get(sid, [])
        total += len(ann)
        tp, _, _ = match_greedy(dets, ann, iou_threshold)
        matched += len(tp)
        for pi, gi, _ in tp:
            db, gb = dets[pi].box, ann[gi]
            rows.append([db.cx - gb.cx, db.cy - gb.cy, db.w - gb.w, db.l - gb.l,
                         normalize_yaw(db.yaw - gb.yaw)])
    fn_ratio = 1.0 - matched / total if total else 0.0
    return np.asarray(rows, dtype=np.float64).reshape(-1, 5), fn_ratio
