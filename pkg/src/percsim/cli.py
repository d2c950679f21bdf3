"""Command-line entry point wiring every stage: corpus generation,
rasterization, rendering, baseline fitting, training, evaluation,
closed-loop simulation, and report aggregation.

Configuration is a single JSON document with per-module sections; flags
override scalars.  Unknown keys are rejected.  Every run echoes its
resolved configuration (and its hash) into the output directory; JSONL
artifacts carry the hash in a ``<file>.meta.json`` sidecar because their
line schemas are fixed.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys

import numpy as np

from . import baselines, imitator, losses, metrics, raster, scene, simloop, trainer
from .seeding import derive_seed

DEFAULTS = {
    "seed": 0,
    "grid": {"height_px": 96, "width_px": 112, "meters_per_px": 0.5},
    "posenc": {"d_model": 8},
    "generator": {
        "n_scenes": 100, "agent_count": [2, 6], "region": [6.0, 44.0, -12.0, 12.0],
        "min_spacing": 5.0, "speed_range": [0.0, 0.0], "yaw_mode": "random",
        "pedestrian_prob": 0.0,
    },
    "proxy": {
        "dist_curve": [[0.0, 1.0], [18.0, 1.0], [30.0, 0.05]],
        "occlusion_curve": [[0.0, 1.0], [0.4, 0.9], [1.0, 0.15]],
        "noise": [0.10, 0.10, 0.04, 0.06, 0.02],
        "fp_rate": 0.1, "seed": None,
    },
    "loss": {"lam": 0.001, "alpha": 2.0, "beta": 0.01, "gamma": 10.0,
             "omega1": 0.005, "omega2": 0.001, "kernel_sigma": 1.0},
    "imitator": {"widths": [32, 64, 128], "head_width": 64, "downsample": 4,
                 "score_threshold": 0.5, "nms_iou_threshold": 0.3},
    "train": {"epochs": 50, "batch_size": 8, "lr": 0.001, "splits": [0.8, 0.2, 0.0],
              "eval_every": 50, "max_steps": 0, "eval_score_threshold": 0.05,
              "mmd_all_pixels": False},
    "gaussian": {"sigma": 0.1, "fn_ratio": None},
    "multimodal": {"k": 3, "fn_ratio": None},
    "range": {"n_bins": 31, "fov": 3.141592653589793, "r_max": 50.0},
    "planner": {"target_speed": 8.0, "accel_gain": 1.0, "d_safe": 8.0,
                "forward_halfwidth": 0.35},
    "world": {"wheelbase": 2.7, "dt": 0.1, "a_min": -6.0, "a_max": 3.0,
              "steer_max": 0.5},
    "sim": {"horizon": 150, "episodes": 20, "ego_speed0": 0.0},
}


class ConfigError(ValueError):
    pass


def _merge(defaults, override, path=""):
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {here} must be an object")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            cfg = _merge(DEFAULTS, json.load(f))
    for dotted, value in (overrides or {}).items():
        section = cfg
        keys = dotted.split(".")
        for k in keys[:-1]:
            section = section[k]
        if keys[-1] not in section:
            raise ConfigError(f"unknown config key: {dotted}")
        section[keys[-1]] = value
    if cfg["proxy"]["seed"] is None:
        cfg["proxy"]["seed"] = derive_seed(cfg["seed"], "proxy")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _echo_config(cfg: dict, outdir: str) -> str:
    os.makedirs(outdir, exist_ok=True)
    h = config_hash(cfg)
    with open(os.path.join(outdir, "resolved_config.json"), "w", encoding="utf-8") as f:
        json.dump({"config_hash": h, "config": cfg}, f, indent=2, sort_keys=True)
        f.write("\n")
    return h


def _sidecar(path: str, h: str, extra: dict | None = None) -> None:
    meta = {"config_hash": h}
    meta.update(extra or {})
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _fail(message: str, **detail) -> int:
    record = {"error": message}
    record.update(detail)
    print(json.dumps(record), file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# config -> module objects


def _grid(cfg) -> raster.GridSpec:
    return raster.GridSpec(**cfg["grid"])


def _pe(cfg) -> raster.PosEncSpec:
    return raster.PosEncSpec(d_model=cfg["posenc"]["d_model"])


def _gen_cfg(cfg) -> scene.GeneratorConfig:
    g = cfg["generator"]
    return scene.GeneratorConfig(
        n_scenes=g["n_scenes"], agent_count=tuple(g["agent_count"]),
        region=tuple(g["region"]), min_spacing=g["min_spacing"],
        speed_range=tuple(g["speed_range"]), yaw_mode=g["yaw_mode"],
        pedestrian_prob=g["pedestrian_prob"])


def _proxy_spec(cfg) -> baselines.TargetProxySpec:
    p = cfg["proxy"]
    return baselines.TargetProxySpec(
        dist_curve=tuple(tuple(q) for q in p["dist_curve"]),
        occlusion_curve=tuple(tuple(q) for q in p["occlusion_curve"]),
        noise=tuple(p["noise"]), fp_rate=p["fp_rate"], seed=p["seed"])


def _imitator_cfg(cfg) -> imitator.ImitatorConfig:
    i = cfg["imitator"]
    return imitator.ImitatorConfig(
        in_channels=4 + cfg["posenc"]["d_model"], widths=tuple(i["widths"]),
        head_width=i["head_width"], downsample=i["downsample"],
        score_threshold=i["score_threshold"], nms_iou_threshold=i["nms_iou_threshold"])


def _weights(cfg) -> losses.LossWeights:
    return losses.LossWeights(**cfg["loss"])


def _train_cfg(cfg) -> trainer.TrainConfig:
    t = cfg["train"]
    return trainer.TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], seed=cfg["seed"],
        weights=_weights(cfg), splits=tuple(t["splits"]), eval_every=t["eval_every"],
        max_steps=t["max_steps"], eval_score_threshold=t["eval_score_threshold"],
        mmd_all_pixels=t["mmd_all_pixels"])


# ---------------------------------------------------------------------------
# perception sources shared by `eval` and `simulate`


def _annotation_dets(scenes_ego) -> dict:
    return {sid: [imitator.Detection(box=a.box, score=1.0)
                  for a in sc.agents if a.kind == "vehicle"]
            for sid, sc in enumerate(scenes_ego)}


def _source_detections(source: str, scenes_ego, cfg, checkpoint=None, baseline_file=None):
    grid = _grid(cfg)
    if source == "annotation":
        return _annotation_dets(scenes_ego)
    if source == "proxy":
        spec = _proxy_spec(cfg)
        return {sid: baselines.target_proxy_perceive(sc, grid, spec, scene_id=sid)
                for sid, sc in enumerate(scenes_ego)}
    if source == "gaussian":
        fn = cfg["gaussian"]["fn_ratio"]
        if fn is None:
            fn = _baseline_field(baseline_file, "fn_ratio")
        spec = baselines.GaussianNoiseSpec(sigma=cfg["gaussian"]["sigma"], fn_ratio=fn,
                                           seed=derive_seed(cfg["seed"], "gaussian"))
        ann = _annotation_dets(scenes_ego)
        return {sid: baselines.gaussian_baseline([d.box for d in ann[sid]], spec, scene_id=sid)
                for sid in ann}
    if source == "multimodal":
        if baseline_file is None:
            raise ConfigError("multimodal source requires --baseline (fit-baseline output)")
        with open(baseline_file, "r", encoding="utf-8") as f:
            data = json.load(f)
        model = baselines.GmmModel.from_dict(data["gmm"])
        fn = cfg["multimodal"]["fn_ratio"]
        if fn is None:
            fn = data["fn_ratio"]
        ann = _annotation_dets(scenes_ego)
        seed = derive_seed(cfg["seed"], "multimodal")
        return {sid: baselines.multimodal_baseline([d.box for d in ann[sid]], model, fn,
                                                   seed, scene_id=sid)
                for sid in ann}
    if source == "imitator":
        if checkpoint is None:
            raise ConfigError("imitator source requires --checkpoint")
        params, icfg = trainer.load_imitator_checkpoint(checkpoint)
        pe = _pe(cfg)
        out = {}
        for sid, sc in enumerate(scenes_ego):
            stack = raster.build_stack(sc, grid, pe)
            maps = imitator.forward(stack, params, icfg)
            dets = imitator.decode(maps, grid, icfg.downsample,
                                   cfg["train"]["eval_score_threshold"])
            out[sid] = imitator.nms_rotated(dets, icfg.nms_iou_threshold)
        return out
    raise ConfigError(f"unknown perception source: {source}")


def _baseline_field(baseline_file, key):
    if baseline_file is None:
        raise ConfigError(f"gaussian fn_ratio not set; provide config value or --baseline file")
    with open(baseline_file, "r", encoding="utf-8") as f:
        return json.load(f)[key]


def _sim_perceiver(source: str, cfg, checkpoint=None, baseline_file=None):
    grid = _grid(cfg)
    if source == "annotation":
        return lambda ep_seed: simloop.annotation_perception()
    if source == "proxy":
        spec = _proxy_spec(cfg)
        return lambda ep_seed: simloop.proxy_perception(grid, spec)
    if source == "gaussian":
        fn = cfg["gaussian"]["fn_ratio"]
        if fn is None:
            fn = _baseline_field(baseline_file, "fn_ratio")
        spec = baselines.GaussianNoiseSpec(sigma=cfg["gaussian"]["sigma"], fn_ratio=fn,
                                           seed=derive_seed(cfg["seed"], "gaussian"))
        return lambda ep_seed: simloop.gaussian_perception(spec)
    if source == "multimodal":
        if baseline_file is None:
            raise ConfigError("multimodal source requires --baseline")
        with open(baseline_file, "r", encoding="utf-8") as f:
            data = json.load(f)
        model = baselines.GmmModel.from_dict(data["gmm"])
        fn = cfg["multimodal"]["fn_ratio"] if cfg["multimodal"]["fn_ratio"] is not None \
            else data["fn_ratio"]
        return lambda ep_seed: simloop.multimodal_perception(model, fn, ep_seed)
    if source == "imitator":
        if checkpoint is None:
            raise ConfigError("imitator source requires --checkpoint")
        params, icfg = trainer.load_imitator_checkpoint(checkpoint)
        pe = _pe(cfg)
        return lambda ep_seed: simloop.imitator_perception(params, icfg, grid, pe)
    raise ConfigError(f"unknown perception source: {source}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    if args.n is not None:
        cfg["generator"]["n_scenes"] = args.n
    outdir = args.outdir or os.path.dirname(os.path.abspath(args.out)) or "."
    h = _echo_config(cfg, outdir)
    scenes = scene.generate_scenes(cfg["seed"], _gen_cfg(cfg))
    scene.save_scenes(scenes, args.out)
    _sidecar(args.out, h, {"n_scenes": len(scenes)})
    print(f"wrote {len(scenes)} scenes to {args.out} (config {h})")
    return 0


def cmd_rasterize(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    scenes = scene.load_scenes(args.scenes)
    grid, pe = _grid(cfg), _pe(cfg)
    outdir = args.outdir or os.path.dirname(os.path.abspath(args.out)) or "."
    h = _echo_config(cfg, outdir)
    stacks = np.stack([raster.build_stack(scene.to_ego_frame(s), grid, pe).as_array()
                       for s in scenes])
    np.savez_compressed(args.out, stacks=stacks, config_hash=h)
    _sidecar(args.out, h, {"shape": list(stacks.shape)})
    print(f"wrote stack cache {args.out} with shape {stacks.shape} (config {h})")
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    scenes = scene.load_scenes(args.scenes)
    if not (0 <= args.index < len(scenes)):
        return _fail(f"scene index {args.index} out of range (corpus has {len(scenes)})")
    h = _echo_config(cfg, args.outdir)
    stack = raster.build_stack(scene.to_ego_frame(scenes[args.index]), _grid(cfg), _pe(cfg))
    paths = raster.write_stack_pgms(stack, args.outdir, prefix=f"scene{args.index:04d}")
    composite = os.path.join(args.outdir, f"scene{args.index:04d}_composite.ppm")
    raster.write_ppm_composite(composite, stack)
    print(f"wrote {len(paths) + 1} renders to {args.outdir} (config {h})")
    return 0


def cmd_fit_baseline(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    scenes = [scene.to_ego_frame(s) for s in scene.load_scenes(args.scenes)]
    dets = imitator.load_detections(args.dets)
    annotations = {sid: [a.box for a in sc.agents if a.kind == "vehicle"]
                   for sid, sc in enumerate(scenes)}
    missing = set(annotations) - set(dets)
    if missing:
        return _fail("detections file lacks scene ids", missing=sorted(missing))
    outdir = args.outdir or os.path.dirname(os.path.abspath(args.out)) or "."
    h = _echo_config(cfg, outdir)
    residuals, fn_ratio = baselines.collect_residuals(annotations, dets)
    k = cfg["multimodal"]["k"]
    if len(residuals) < max(k, 2):
        return _fail(f"not enough matched residuals ({len(residuals)}) to fit K={k}")
    model, ll = baselines.fit_gmm_em(residuals, k, seed=derive_seed(cfg["seed"], "gmm"))
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"config_hash": h, "gmm": model.to_dict(), "fn_ratio": fn_ratio,
                   "log_likelihood": ll, "n_residuals": len(residuals)}, f,
                  indent=2, sort_keys=True)
        f.write("\n")
    print(f"fit K={k} mixture on {len(residuals)} residuals, fn_ratio={fn_ratio:.3f} "
          f"-> {args.out} (config {h})")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    scenes = scene.load_scenes(args.scenes)
    grid, pe = _grid(cfg), _pe(cfg)
    h = _echo_config(cfg, args.outdir)
    icfg = _imitator_cfg(cfg)
    tcfg = _train_cfg(cfg)
    records = trainer.prepare_dataset(scenes, _proxy_spec(cfg), grid, pe)
    train_recs, val_recs, test_recs = trainer.split_records(records, tcfg.splits, cfg["seed"])
    ckpt = os.path.join(args.outdir, "checkpoint.bin")
    log_path = os.path.join(args.outdir, "training_log.jsonl")
    result = trainer.train(tcfg, train_recs, icfg, grid, checkpoint_path=ckpt,
                           log_path=log_path, val_records=val_recs)
    _sidecar(log_path, h)
    report = trainer.evaluate_records(result.params, test_recs or val_recs or train_recs,
                                      icfg, grid, tcfg.eval_score_threshold)
    report.meta.update({"config_hash": h, "label": "imitator",
                        "split": "test" if test_recs else ("val" if val_recs else "train")})
    report.write_json(os.path.join(args.outdir, "eval_report.json"))
    print(f"trained {result.steps_run} steps (aborted={result.aborted}); "
          f"best val mAP@0.5={result.best_map:.3f}; eval mAP@0.5={report.map_050:.3f}; "
          f"checkpoint {ckpt} (config {h})")
    return 0 if not result.aborted else _fail("training aborted on non-finite loss",
                                              checkpoint=ckpt)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    outdir = args.outdir or os.path.dirname(os.path.abspath(args.out)) or "."
    h = _echo_config(cfg, outdir)
    if args.preds is not None:
        preds = imitator.load_detections(args.preds)
    else:
        if args.scenes is None or args.source is None:
            return _fail("eval needs either --preds or (--scenes and --source)")
        scenes_ego = [scene.to_ego_frame(s) for s in scene.load_scenes(args.scenes)]
        preds = _source_detections(args.source, scenes_ego, cfg,
                                   checkpoint=args.checkpoint, baseline_file=args.baseline)
        if args.dump is not None:
            imitator.save_detections(args.dump, preds)
            _sidecar(args.dump, h, {"source": args.source})
    if args.targets is None:
        return _fail("eval requires --targets (detections JSONL)")
    targets = imitator.load_detections(args.targets)
    try:
        report = metrics.evaluate_detections(preds, targets,
                                             fixed_threshold=cfg["imitator"]["score_threshold"])
    except ValueError as e:
        return _fail(str(e))
    label = args.label or args.source or "preds"
    report.meta.update({"config_hash": h, "label": label,
                        "score_convention": "baseline/annotation sources carry score 1.0"})
    report.write_json(args.out)
    print(f"{label}: mAP@0.5={report.map_050:.3f} mAP@0.7={report.map_070:.3f} "
          f"maxR@0.5={report.maxr_050:.3f} maxR@0.7={report.maxr_070:.3f} -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _seed_override(args))
    if args.episodes is not None:
        cfg["sim"]["episodes"] = args.episodes
    if args.horizon is not None:
        cfg["sim"]["horizon"] = args.horizon
    scenes = scene.load_scenes(args.scenes)
    if not scenes:
        return _fail("scene corpus is empty")
    h = _echo_config(cfg, args.outdir)
    try:
        factory = _sim_perceiver(args.perception, cfg, checkpoint=args.checkpoint,
                                 baseline_file=args.baseline)
    except ConfigError as e:
        return _fail(str(e))
    n = cfg["sim"]["episodes"]
    initial = [scenes[i % len(scenes)] for i in range(n)]
    logs, summary = simloop.run_batch(
        initial, factory, simloop.PlannerConfig(**cfg["planner"]),
        simloop.WorldConfig(**cfg["world"]), simloop.RangeSpec(**cfg["range"]),
        horizon=cfg["sim"]["horizon"], seed=cfg["seed"],
        ego_speed0=cfg["sim"]["ego_speed0"])
    episodes_path = os.path.join(args.outdir, "episodes.jsonl")
    with open(episodes_path, "w", encoding="utf-8") as f:
        for i, log in enumerate(logs):
            for line in log.to_jsonl().splitlines():
                f.write(json.dumps({"episode": i, **json.loads(line)}) + "\n")
    _sidecar(episodes_path, h, {"perception": args.perception})
    summary.update({"perception": args.perception, "config_hash": h})
    with open(os.path.join(args.outdir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{args.perception}: {summary['episodes']} episodes, "
          f"mean distance {summary['mean_distance']:.2f} m, "
          f"collision rate {summary['collision_rate']:.2f} -> {args.outdir}")
    return 0


def cmd_report(args) -> int:
    rows = []
    hashes = set()
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        meta = data.get("meta", {})
        hashes.add(meta.get("config_hash"))
        rows.append({
            "label": meta.get("label", os.path.basename(path)),
            "map_050": data["map_050"], "map_070": data["map_070"],
            "maxr_050": data["maxr_050"], "maxr_070": data["maxr_070"],
            "precision_at_fixed": data["precision_at_fixed"],
            "recall_at_fixed": data["recall_at_fixed"],
        })
    if len(hashes) > 1:
        return _fail("refusing to aggregate reports with mixed config hashes",
                     hashes=sorted(str(x) for x in hashes))
    header = f"{'source':<14}{'mAP@0.5':>9}{'mAP@0.7':>9}{'maxR@0.5':>10}{'maxR@0.7':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['label']:<14}{r['map_050']:>9.3f}{r['map_070']:>9.3f}"
                     f"{r['maxr_050']:>10.3f}{r['maxr_070']:>10.3f}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"config_hash": next(iter(hashes)), "rows": rows, "table": table},
                      f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def _seed_override(args) -> dict:
    return {"seed": args.seed} if getattr(args, "seed", None) is not None else {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="percsim",
                                     description="Perception imitation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outdir_required=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        if outdir_required:
            p.add_argument("--outdir", required=True)
        else:
            p.add_argument("--outdir", default=None)

    p = sub.add_parser("gen", help="generate a synthetic scene corpus")
    common(p)
    p.add_argument("--n", type=int, default=None, help="override scene count")
    p.add_argument("--out", required=True, help="output scenes .jsonl")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("rasterize", help="precompute raster stacks to .npz")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("render", help="dump one scene's channels as PGM/PPM")
    common(p, outdir_required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("fit-baseline", help="fit the mixture noise model + FN ratio")
    common(p)
    p.add_argument("--scenes", required=True)
    p.add_argument("--dets", required=True, help="target detections .jsonl")
    p.add_argument("--out", required=True, help="output model .json")
    p.set_defaults(func=cmd_fit_baseline)

    p = sub.add_parser("train", help="train the imitator against the proxy")
    common(p, outdir_required=True)
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate detections against targets")
    common(p)
    p.add_argument("--preds", default=None, help="predictions .jsonl")
    p.add_argument("--targets", default=None, help="target detections .jsonl")
    p.add_argument("--scenes", default=None, help="scenes for on-the-fly sources")
    p.add_argument("--source", default=None,
                   choices=["annotation", "proxy", "imitator", "gaussian", "multimodal"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", default=None, help="fit-baseline output .json")
    p.add_argument("--dump", default=None, help="write generated detections here")
    p.add_argument("--label", default=None)
    p.add_argument("--out", required=True, help="report .json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="closed-loop episodes")
    common(p, outdir_required=True)
    p.add_argument("--scenes", required=True, help="initial scenes .jsonl")
    p.add_argument("--perception", required=True,
                   choices=["annotation", "proxy", "imitator", "gaussian", "multimodal"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate eval reports into one table")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, scene.SceneValidationError, scene.SceneFormatError,
            scene.GenerationError) as e:
        return _fail(str(e), kind=type(e).__name__)
    except FileNotFoundError as e:
        return _fail(f"file not found: {e.filename}", kind="FileNotFoundError")
    except OSError as e:
        return _fail(str(e), kind="OSError")


if __name__ == "__main__":
    sys.exit(main())
