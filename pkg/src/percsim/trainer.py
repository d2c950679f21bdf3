"""Training orchestration: run the target proxy over a corpus, derive
pseudo target/annotation maps, optimize the imitator with the full loss,
and evaluate checkpoints with the detection metrics.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nm
from .baselines import TargetProxySpec, target_proxy_perceive
from .imitator import (Detection, HeadMaps, ImitatorConfig, decode, encode_targets,
                       forward_tensors, init_params, nms_rotated)
from .losses import LossWeights, total_loss
from .metrics import EvalReport, evaluate_detections
from .raster import GridSpec, PosEncSpec, build_stack
from .scene import SceneState, to_ego_frame
from .seeding import rng_for


@dataclass
class TrainRecord:
    scene_id: int
    x: np.ndarray  # (C, H, W) raster stack
    y_maps: HeadMaps  # pseudo maps from proxy detections
    z_maps: HeadMaps  # pseudo maps from annotations
    proxy_dets: list
    annotation_boxes: list


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 0.001
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    splits: tuple = (0.8, 0.2, 0.0)  # train / val / test fractions
    eval_every: int = 50  # steps between checkpoint-selection evals
    max_steps: int = 0  # 0 = no cap
    eval_score_threshold: float = 0.05  # decode threshold for PR sweeps
    mmd_all_pixels: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def prepare_dataset(scenes, proxy_spec: TargetProxySpec, grid: GridSpec,
                    pe_spec: PosEncSpec) -> list:
    """One record per scene: raster stack + both pseudo-map sets."""
    if not scenes:
        raise ValueError("cannot prepare a dataset from an empty corpus")
    records = []
    for sid, scene in enumerate(scenes):
        ego_scene = to_ego_frame(scene)
        stack = build_stack(ego_scene, grid, pe_spec)
        proxy_dets = target_proxy_perceive(ego_scene, grid, proxy_spec, scene_id=sid)
        ann_boxes = [a.box for a in ego_scene.agents if a.kind == "vehicle"]
        records.append(TrainRecord(
            scene_id=sid,
            x=stack.as_array(),
            y_maps=encode_targets(proxy_dets, grid, 4),
            z_maps=encode_targets(ann_boxes, grid, 4),
            proxy_dets=proxy_dets,
            annotation_boxes=ann_boxes,
        ))
    return records


def split_records(records, splits, seed: int):
    """Disjoint (train, val, test) by seeded shuffle of scene ids."""
    ids = [r.scene_id for r in records]
    order = rng_for(seed, "dataset-split").permutation(len(ids))
    n_train = int(round(splits[0] * len(ids)))
    n_val = int(round(splits[1] * len(ids)))
    sets = (set(order[:n_train]), set(order[n_train:n_train + n_val]),
            set(order[n_train + n_val:]))
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    out = tuple([records[i] for i in sorted(s)] for s in sets)
    return out


@dataclass
class TrainResult:
    params: dict
    best_map: float
    steps_run: int
    log: list
    aborted: bool = False


def _clone_params(params: dict) -> dict:
    return {k: nm.Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def train(config: TrainConfig, records, imitator_cfg: ImitatorConfig,
          grid: GridSpec, checkpoint_path=None, log_path=None,
          val_records=None) -> TrainResult:
    """Adam over seeded mini-batch shuffles; keeps the checkpoint with the
    best validation mAP@0.5 against the proxy outputs (training records
    stand in when no validation split is given).  A non-finite loss aborts
    with the last good parameters."""
    if not records:
        raise ValueError("no training records")
    params = init_params(imitator_cfg, config.seed)
    state = nm.AdamState(lr=config.lr)
    rng = rng_for(config.seed, "batch-shuffle")
    eval_records = val_records if val_records else records
    best_params = _clone_params(params)
    best_map = -1.0
    log = []
    step = 0
    aborted = False
    t0 = time.monotonic()
    try:
        for epoch in range(config.epochs):
            order = rng.permutation(len(records))
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                for p in params.values():
                    p.zero_grad()
                reports = []
                for idx in batch:
                    rec = records[int(idx)]
                    cls_t, reg_t = forward_tensors(params, rec.x[None], imitator_cfg)
                    loss, report = total_loss(
                        cls_t, reg_t, rec.y_maps, rec.z_maps, params, config.weights,
                        grid, imitator_cfg.downsample,
                        score_threshold=imitator_cfg.score_threshold,
                        mmd_all_pixels=config.mmd_all_pixels)
                    nm.backward(nm.mul(loss, 1.0 / len(batch)))
                    reports.append(report)
                grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                         for k, p in params.items()}
                nm.adam_step(params, grads, state)
                step += 1
                entry = {"step": step, "epoch": epoch,
                         "wall_time": time.monotonic() - t0}
                for key in ("l_total", "l_cls", "l_reg", "l_corner",
                            "l_mmd_box", "l_mmd_err", "l_weight_reg"):
                    entry[key] = float(np.mean([getattr(r, key) for r in reports]))
                log.append(entry)
                if config.eval_every and step % config.eval_every == 0:
                    report = evaluate_records(params, eval_records, imitator_cfg, grid,
                                              config.eval_score_threshold)
                    if report.map_050 > best_map:
                        best_map = report.map_050
                        best_params = _clone_params(params)
                if config.max_steps and step >= config.max_steps:
                    raise StopIteration
        raise StopIteration
    except StopIteration:
        pass
    except (nm.FiniteCheckError, ValueError) as e:
        if isinstance(e, ValueError) and "non-finite" not in str(e):
            raise
        aborted = True
        log.append({"step": step, "aborted": f"{type(e).__name__}: {e}"})
        params = best_params if best_map >= 0 else params
    if not aborted:
        report = evaluate_records(params, eval_records, imitator_cfg, grid,
                                  config.eval_score_threshold)
        if report.map_050 > best_map:
            best_map = report.map_050
            best_params = _clone_params(params)
        params = best_params
    if checkpoint_path is not None:
        save_imitator_checkpoint(checkpoint_path, params, imitator_cfg,
                                 meta={"steps": step, "best_map_050": best_map})
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as f:
            for entry in log:
                f.write(json.dumps(entry) + "\n")
    return TrainResult(params=params, best_map=best_map, steps_run=step,
                       log=log, aborted=aborted)


def predict_records(params, records, imitator_cfg: ImitatorConfig, grid: GridSpec,
                    score_threshold: float) -> dict:
    """Decode + NMS over records; returns {scene_id: [Detection, ...]}."""
    preds = {}
    for rec in records:
        with nm.no_grad():
            cls_t, reg_t = forward_tensors(params, rec.x[None], imitator_cfg)
        maps = HeadMaps(cls=cls_t.data[0, 0], reg=reg_t.data[0].transpose(1, 2, 0))
        dets = decode(maps, grid, imitator_cfg.downsample, score_threshold)
        preds[rec.scene_id] = nms_rotated(dets, imitator_cfg.nms_iou_threshold)
    return preds


def evaluate_records(params, records, imitator_cfg: ImitatorConfig, grid: GridSpec,
                     score_threshold: float = 0.05) -> EvalReport:
    """mAP/maxR of decoded predictions against the proxy detections."""
    preds = predict_records(params, records, imitator_cfg, grid, score_threshold)
    targets = {rec.scene_id: rec.proxy_dets for rec in records}
    return evaluate_detections(preds, targets,
                               fixed_threshold=imitator_cfg.score_threshold,
                               meta={"decode_threshold": score_threshold})


def evaluate_checkpoint(checkpoint_path, records, grid: GridSpec,
                        score_threshold: float = 0.05) -> EvalReport:
    params, cfg = load_imitator_checkpoint(checkpoint_path)
    return evaluate_records(params, records, cfg, grid, score_threshold)


# ---------------------------------------------------------------------------
# checkpoint wrappers that also persist the network configuration


def save_imitator_checkpoint(path, params: dict, cfg: ImitatorConfig,
                             meta: dict | None = None) -> None:
    full_meta = {"imitator_config": asdict(cfg)}
    full_meta.update(meta or {})
    nm.save_checkpoint(path, params, meta=full_meta)


def load_imitator_checkpoint(path):
    """Returns (params dict of grad-enabled tensors, ImitatorConfig)."""
    arrays, meta = nm.load_checkpoint(path)
    cfg_dict = dict(meta["imitator_config"])
    cfg_dict["widths"] = tuple(cfg_dict["widths"])
    cfg = ImitatorConfig(**cfg_dict)
    params = {k: nm.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return params, cfg
