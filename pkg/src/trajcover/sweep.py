"""Deterministic experiment sweeps: cells, summary CSV, and SVG reports.

A sweep runs the cross-product of its axes (epsilon, loss variant, lambda,
data fraction, pretraining, seed; plus anchor counts for regression cells)
on a train/val split of one scene corpus. Every cell derives its RNG seeds
by hashing (master seed, cell id), writes its own directory under
out/cells/, and is skipped on rerun when its config hash and metrics are
already present. Cell failures are recorded and do not stop the sweep.
"""

from __future__ import annotations

import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from . import plots, serialize
from .geometry import Trajectory, transform_to_frame, trajectory_on_road
from .model import (
    Model,
    ModelConfig,
    SceneDataset,
    TrainConfig,
    kinematic_features,
    load_model,
    pretrain_map_only,
    save_model,
    train,
)
from .raster import DEFAULT_RASTER, downsample_features, render
from .synthdata import future_in_agent_frame, load_scenes, split
from .trajset import (
    TrajectorySet,
    build_set,
    build_set_of_size,
    cross_distances,
    distances_to,
    load_set,
    onroad_mask,
    save_set,
)

EVAL_CSV_HEADER = ("scene_id", "minade1", "minade5", "minade10", "miss_5_2", "dac", "mean_mode_dist")

SUMMARY_HEADER = (
    "cell_id", "kind", "status", "epsilon", "set_size", "loss_variant", "lambda",
    "data_fraction", "pretrained", "seed", "n_modes", "minade1", "minade5", "minade10",
    "miss_5_2", "dac", "mean_mode_dist", "resid_l1", "resid_linf",
)


@dataclass(frozen=True)
class SweepConfig:
    scenes_dir: str
    out_dir: str
    epsilons: tuple = (2.0,)
    lambdas: tuple = (0.0,)
    loss_variants: tuple = ("ce",)
    data_fractions: tuple = (1.0,)
    pretrain_flags: tuple = (0,)
    seeds: tuple = (0,)
    set_sizes: tuple = ()
    metric: str = "max_l2"
    epochs: int = 20
    batch_size: int = 32
    lr0: float = 1e-3
    lr_decay: float = 0.9
    threshold: float = 2.0
    alpha: float = 1.0
    feature_grid: tuple = (25, 25)
    hidden_sizes: tuple = (256, 256)
    master_seed: int = 0
    split_seed: int = 0
    val_fraction: float = 0.2
    max_candidates: int = 60_000

    def __post_init__(self):
        for name in ("epsilons", "lambdas", "loss_variants", "data_fractions", "pretrain_flags", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep axis {name} must be nonempty")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")


def derived_seed(master_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _fmt_num(x) -> str:
    return format(float(x), "g")


@dataclass
class _EvalBundle:
    """Everything a cell needs to score the validation split."""

    inputs: np.ndarray
    mean_dists: np.ndarray
    max_dists: np.ndarray
    onroad: np.ndarray
    pair_dists: np.ndarray
    closest: np.ndarray
    gt_agent: np.ndarray
    scene_ids: list
    poses: list = field(default_factory=list)
    areas: list = field(default_factory=list)


@dataclass
class _CellTask:
    cell_id: str
    kind: str  # "cls" | "reg"
    cell_dir: str
    config: dict
    set_path: str
    train_ds: SceneDataset
    val: _EvalBundle
    train_kwargs: dict
    model_seed: int
    feature_grid: tuple
    hidden_sizes: tuple
    init_checkpoint: str | None = None


def _scene_feature_arrays(scenes, grid, map_only: bool):
    feats, kins = [], []
    for ctx in scenes:
        mode = "map_only" if map_only else "full"
        feats.append(downsample_features(render(ctx, mode, DEFAULT_RASTER), grid))
        kins.append(kinematic_features(ctx))
    return np.array(feats), np.array(kins)


def _labels_for_set(scenes, tset: TrajectorySet):
    mean_d, max_d, gts = [], [], []
    for ctx in scenes:
        gt = future_in_agent_frame(ctx)
        mean_d.append(distances_to(tset, gt, "mean_l2"))
        max_d.append(distances_to(tset, gt, "max_l2"))
        gts.append(gt.points)
    mean_d = np.array(mean_d)
    return mean_d, np.array(max_d), np.argmin(mean_d, axis=1), np.array(gts)


def _masks_for_set(scenes, tset: TrajectorySet) -> np.ndarray:
    return np.array([onroad_mask(tset, ctx.target_pose(), ctx.scene_map.drivable) for ctx in scenes])


def _scene_rows_from_lookup(order_rows, val: _EvalBundle, k5: int, k10: int):
    """Per-scene eval rows for predictions that are set members (indices)."""
    rows, agg = [], {"minade1": [], "minade5": [], "minade10": [], "miss_5_2": [], "dac": [], "mmd": []}
    rank_on = np.zeros(k5)
    for i, order in enumerate(order_rows):
        top5 = order[:k5]
        minade1 = float(val.mean_dists[i, order[0]])
        minade5 = float(val.mean_dists[i, top5].min())
        minade10 = float(val.mean_dists[i, order[:k10]].min())
        miss = int(val.max_dists[i, top5].min() > 2.0)
        dac_i = float(val.onroad[i, top5].mean())
        mmd = None
        if k5 >= 2:
            sub = val.pair_dists[np.ix_(top5, top5)]
            mmd = float(sub[np.triu_indices(k5, k=1)].mean())
        rank_on += val.onroad[i, top5]
        rows.append((val.scene_ids[i], minade1, minade5, minade10, miss, dac_i, mmd))
        for key, value in zip(("minade1", "minade5", "minade10", "miss_5_2", "dac", "mmd"),
                              (minade1, minade5, minade10, miss, dac_i, mmd)):
            if value is not None:
                agg[key].append(value)
    aggregates = {k: (float(np.mean(v)) if v else None) for k, v in agg.items()}
    return rows, aggregates, (rank_on / max(len(order_rows), 1)).tolist()


def _eval_classification(model: Model, val: _EvalBundle):
    logits = model.forward_batch(val.inputs)
    k = logits.shape[1]
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    order_rows = [np.argsort(-probs[i], kind="stable") for i in range(logits.shape[0])]
    return _scene_rows_from_lookup(order_rows, val, min(5, k), min(10, k))


def _eval_regression(model: Model, val: _EvalBundle):
    out = model.forward_batch(val.inputs)
    logits, residuals = model.split_output(out)
    k = logits.shape[1]
    k5, k10 = min(5, k), min(10, k)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    anchors = model.traj_set.points
    rows, agg = [], {"minade1": [], "minade5": [], "minade10": [], "miss_5_2": [], "dac": [], "mmd": []}
    rank_on = np.zeros(k5)
    resid_l1, resid_linf = [], []
    for i in range(val.inputs.shape[0]):
        order = np.argsort(-probs[i], kind="stable")
        preds = anchors[order[:k10]] + residuals[i, order[:k10]]
        diff = preds - val.gt_agent[i][None, :, :]
        dists = np.hypot(diff[..., 0], diff[..., 1])
        mean_d, max_d = dists.mean(axis=1), dists.max(axis=1)
        minade1, minade5, minade10 = float(mean_d[0]), float(mean_d[:k5].min()), float(mean_d.min())
        miss = int(max_d[:k5].min() > 2.0)
        pose, area = val.poses[i], val.areas[i]
        on = 0
        for j in range(k5):
            traj = transform_to_frame(Trajectory(preds[j], model.traj_set.dt, "agent"), pose, "to_global")
            hit = trajectory_on_road(traj, area)
            on += hit
            rank_on[j] += hit
        dac_i = on / k5
        mmd = None
        if k5 >= 2:
            pd = preds[:k5, None, :, :] - preds[None, :k5, :, :]
            pair = np.hypot(pd[..., 0], pd[..., 1]).mean(axis=2)
            mmd = float(pair[np.triu_indices(k5, k=1)].mean())
        matched = residuals[i, int(val.closest[i])].reshape(-1)
        resid_l1.append(float(np.abs(matched).mean()))
        resid_linf.append(float(np.abs(matched).max()))
        rows.append((val.scene_ids[i], minade1, minade5, minade10, miss, dac_i, mmd))
        for key, value in zip(("minade1", "minade5", "minade10", "miss_5_2", "dac", "mmd"),
                              (minade1, minade5, minade10, miss, dac_i, mmd)):
            if value is not None:
                agg[key].append(value)
    aggregates = {key: (float(np.mean(v)) if v else None) for key, v in agg.items()}
    aggregates["resid_l1"] = float(np.mean(resid_l1))
    aggregates["resid_linf"] = float(np.mean(resid_linf))
    return rows, aggregates, (rank_on / max(val.inputs.shape[0], 1)).tolist()


def _run_cell(task: _CellTask) -> dict:
    cell_dir = Path(task.cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    serialize.write_json(cell_dir / "config.json",
                         {"cell_id": task.cell_id, "hash": _config_hash(task.config), "config": task.config})
    try:
        train_cfg = TrainConfig(**task.train_kwargs)
        tset = load_set(task.set_path)
        if task.init_checkpoint:
            mdl = load_model(task.init_checkpoint)
        else:
            head = "ordinal_regression" if task.kind == "reg" else "classification"
            mdl = Model(ModelConfig(tset, task.feature_grid, task.hidden_sizes, head, task.model_seed))
        result = train(mdl, task.train_ds, train_cfg)
        serialize.write_csv(
            cell_dir / "train_log.csv",
            ("epoch", "step", "loss", "ce_term", "offroad_term"),
            [(r["epoch"], r["step"], r["loss"], r["ce_term"], r["offroad_term"]) for r in result.log],
        )
        save_model(mdl, cell_dir / "model.json")
        if task.kind == "reg":
            rows, aggregates, by_rank = _eval_regression(mdl, task.val)
        else:
            rows, aggregates, by_rank = _eval_classification(mdl, task.val)
        serialize.write_csv(cell_dir / "metrics.csv", EVAL_CSV_HEADER, rows)
        payload = {
            "cell_id": task.cell_id,
            "status": "ok",
            "config": task.config,
            "aggregates": aggregates,
            "dac_by_rank": by_rank,
        }
    except Exception as exc:  # cell failures are recorded, not fatal
        payload = {
            "cell_id": task.cell_id,
            "status": "failed",
            "config": task.config,
            "error": f"{type(exc).__name__}: {exc}",
            "trace": traceback.format_exc(),
        }
    serialize.write_json(cell_dir / "metrics.json", payload)
    return payload


def _completed_payload(cell_dir: Path, config: dict):
    cfg_file, metrics_file = cell_dir / "config.json", cell_dir / "metrics.json"
    if not (cfg_file.exists() and metrics_file.exists()):
        return None
    try:
        existing = serialize.read_json(cfg_file)
        if existing.get("hash") != _config_hash(config):
            return None
        return serialize.read_json(metrics_file)
    except (ValueError, KeyError):
        return None


def _summary_row(payload: dict) -> tuple:
    cfg = payload["config"]
    agg = payload.get("aggregates", {})
    return (
        payload["cell_id"], cfg["kind"], payload["status"], cfg.get("epsilon"),
        cfg.get("set_size"), cfg.get("loss_variant"), cfg.get("lambda"),
        cfg.get("data_fraction"), cfg.get("pretrained"), cfg.get("seed"), cfg.get("n_modes"),
        agg.get("minade1"), agg.get("minade5"), agg.get("minade10"),
        agg.get("miss_5_2"), agg.get("dac"), agg.get("mmd"),
        agg.get("resid_l1"), agg.get("resid_linf"),
    )


def _emit_plots(payloads: list, cfg: SweepConfig, plot_dir: Path):
    plot_dir.mkdir(parents=True, exist_ok=True)
    ok = [p for p in payloads if p["status"] == "ok"]
    cls_rows = [
        {**p["config"], **p["aggregates"], "dac_by_rank": p.get("dac_by_rank")}
        for p in ok if p["config"]["kind"] == "cls"
    ]
    reg_rows = [
        {**p["config"], **p["aggregates"]} for p in ok if p["config"]["kind"] == "reg"
    ]
    base_variant = cfg.loss_variants[0]
    base_frac = max(cfg.data_fractions)
    base_lambda = cfg.lambdas[0]

    rows = [r for r in cls_rows if r["loss_variant"] == base_variant
            and r["data_fraction"] == base_frac and r["pretrained"] == 0]
    if rows and len(cfg.lambdas) >= 1:
        series = {}
        for eps in cfg.epsilons:
            means = plots.mean_over_seeds([r for r in rows if r["epsilon"] == eps], ("lambda",), "dac")
            if means:
                series[f"eps={_fmt_num(eps)}"] = [(lam, v) for (lam,), v in sorted(means.items())]
        if series:
            plots.save_svg(plots.line_plot_svg(series, "Drivable-area compliance vs off-road weight",
                                               "lambda", "top-5 DAC"), plot_dir / "dac_vs_lambda.svg")

    rows = [r for r in cls_rows if r["loss_variant"] == base_variant and r["lambda"] == base_lambda]
    if rows and len(cfg.data_fractions) >= 1 and len(cfg.pretrain_flags) > 1:
        series = {}
        for pre, label in ((0, "from scratch"), (1, "map pretrained")):
            means = plots.mean_over_seeds([r for r in rows if r["pretrained"] == pre],
                                          ("data_fraction",), "minade5")
            if means:
                series[label] = [(frac, v) for (frac,), v in sorted(means.items())]
        if series:
            plots.save_svg(plots.line_plot_svg(series, "Data-budget sweep", "train fraction", "minADE_5"),
                           plot_dir / "minade5_vs_fraction.svg")

    rows = [r for r in cls_rows if r["loss_variant"] == base_variant
            and r["data_fraction"] == base_frac and r["pretrained"] == 0 and r.get("dac_by_rank")]
    if rows:
        series = {}
        for lam in cfg.lambdas:
            vecs = [r["dac_by_rank"] for r in rows if r["lambda"] == lam]
            if vecs:
                mean_vec = np.mean(np.array(vecs, dtype=float), axis=0)
                series[f"lambda={_fmt_num(lam)}"] = [(rank + 1, float(v)) for rank, v in enumerate(mean_vec)]
        if series:
            plots.save_svg(plots.line_plot_svg(series, "DAC by mode probability rank", "mode rank", "DAC"),
                           plot_dir / "dac_by_rank.svg")

    rows = [r for r in cls_rows if r["data_fraction"] == base_frac
            and r["lambda"] == base_lambda and r["pretrained"] == 0]
    if rows and len(cfg.loss_variants) > 1:
        series = {}
        for idx, variant in enumerate(cfg.loss_variants):
            means = plots.mean_over_seeds([r for r in rows if r["loss_variant"] == variant], (), "mmd")
            if means:
                series[variant] = [(idx, means[()])]
        if series:
            plots.save_svg(plots.line_plot_svg(series, "Mode spread by loss variant",
                                               "variant index", "mean distance between modes (m)"),
                           plot_dir / "mode_distance_by_variant.svg")

    if reg_rows:
        means = plots.mean_over_seeds(reg_rows, ("set_size",), "resid_l1")
        if means:
            series = {"mean |residual| (l1)": [(size, v) for (size,), v in sorted(means.items())]}
            plots.save_svg(plots.line_plot_svg(series, "Residual magnitude vs anchor count",
                                               "anchors", "mean l1 residual (m)"),
                           plot_dir / "residual_l1_vs_size.svg")


def run_sweep(cfg: SweepConfig) -> int:
    out = Path(cfg.out_dir)
    (out / "sets").mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(parents=True, exist_ok=True)

    scenes = load_scenes(cfg.scenes_dir)
    parts = split(scenes, {"train": 1.0 - cfg.val_fraction, "val": cfg.val_fraction}, cfg.split_seed)
    train_scenes, val_scenes = parts["train"], parts["val"]
    if not train_scenes or not val_scenes:
        raise ValueError("corpus too small to split into train and val")
    candidates = [future_in_agent_frame(ctx) for ctx in train_scenes]

    set_paths: dict = {}
    for eps in cfg.epsilons:
        path = out / "sets" / f"eps_{_fmt_num(eps)}.json"
        if not path.exists():
            save_set(build_set(candidates, eps, cfg.metric, cfg.max_candidates), path)
        set_paths[("eps", eps)] = path
    for size in cfg.set_sizes:
        path = out / "sets" / f"size_{size}.json"
        if not path.exists():
            save_set(build_set_of_size(candidates, size, cfg.metric, cfg.max_candidates), path)
        set_paths[("size", size)] = path

    # features are set-independent; labels/masks are computed per set
    train_full, train_kin = _scene_feature_arrays(train_scenes, cfg.feature_grid, map_only=False)
    val_full, val_kin = _scene_feature_arrays(val_scenes, cfg.feature_grid, map_only=False)
    need_pretrain = any(int(p) for p in cfg.pretrain_flags)
    if need_pretrain:
        train_map, _ = _scene_feature_arrays(train_scenes, cfg.feature_grid, map_only=True)

    bundles: dict = {}
    for key, path in set_paths.items():
        tset = load_set(path)
        tr_mean, tr_max, tr_closest, tr_gt = _labels_for_set(train_scenes, tset)
        tr_mask = _masks_for_set(train_scenes, tset)
        train_ds = SceneDataset(
            features=train_full, kin=train_kin, onroad=tr_mask,
            scene_ids=[c.scene_id for c in train_scenes],
            mean_dists=tr_mean, max_dists=tr_max, closest=tr_closest, gt_agent=tr_gt,
        )
        va_mean, va_max, va_closest, va_gt = _labels_for_set(val_scenes, tset)
        val_bundle = _EvalBundle(
            inputs=np.concatenate([val_full, val_kin], axis=1),
            mean_dists=va_mean, max_dists=va_max,
            onroad=_masks_for_set(val_scenes, tset),
            pair_dists=cross_distances(tset.points, tset.points, "mean_l2"),
            closest=va_closest, gt_agent=va_gt,
            scene_ids=[c.scene_id for c in val_scenes],
            poses=[c.target_pose() for c in val_scenes],
            areas=[c.scene_map.drivable for c in val_scenes],
        )
        map_ds = None
        if need_pretrain and key[0] == "eps":
            map_ds = SceneDataset(features=train_map, kin=train_kin, onroad=tr_mask,
                                  scene_ids=[c.scene_id for c in train_scenes])
        bundles[key] = (path, train_ds, val_bundle, map_ds)

    pretrained_paths: dict = {}
    if need_pretrain:
        pre_dir = out / "pretrained"
        pre_dir.mkdir(parents=True, exist_ok=True)
        for eps in cfg.epsilons:
            path, _, _, map_ds = bundles[("eps", eps)]
            tset = load_set(path)
            for seed in cfg.seeds:
                label = f"pretrain-eps{_fmt_num(eps)}-seed{seed}"
                ckpt = pre_dir / f"{label}.json"
                if not ckpt.exists():
                    mdl = Model(ModelConfig(tset, cfg.feature_grid, cfg.hidden_sizes,
                                            "classification", derived_seed(cfg.master_seed, label + ":init")))
                    pre_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0,
                                          lr_decay=cfg.lr_decay, seed=derived_seed(cfg.master_seed, label))
                    pretrain_map_only(mdl, map_ds, pre_cfg)
                    save_model(mdl, ckpt)
                pretrained_paths[(eps, seed)] = ckpt

    tasks: list[_CellTask] = []
    payloads: list[dict] = []
    for eps, variant, lam, frac, pre, seed in product(
        cfg.epsilons, cfg.loss_variants, cfg.lambdas, cfg.data_fractions, cfg.pretrain_flags, cfg.seeds
    ):
        pre = int(pre)
        cell_id = (f"cls-eps{_fmt_num(eps)}-{variant}-lam{_fmt_num(lam)}-"
                   f"frac{_fmt_num(frac)}-pre{pre}-seed{seed}")
        path, train_ds, val_bundle, _ = bundles[("eps", eps)]
        n_modes = train_ds.onroad.shape[1]
        config = {
            "kind": "cls", "epsilon": eps, "set_size": None, "loss_variant": variant,
            "lambda": lam, "data_fraction": frac, "pretrained": pre, "seed": seed,
            "n_modes": n_modes, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "lr0": cfg.lr0, "lr_decay": cfg.lr_decay, "threshold": cfg.threshold,
            "master_seed": cfg.master_seed, "split_seed": cfg.split_seed,
        }
        cell_dir = out / "cells" / cell_id
        done = _completed_payload(cell_dir, config)
        if done is not None:
            payloads.append(done)
            continue
        tasks.append(_CellTask(
            cell_id=cell_id, kind="cls", cell_dir=str(cell_dir), config=config,
            set_path=str(path), train_ds=train_ds, val=val_bundle,
            train_cfg=TrainConfig(
                epochs=cfg.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0, lr_decay=cfg.lr_decay,
                lambda_offroad=lam, loss_variant=variant, threshold=cfg.threshold,
                data_fraction=frac, seed=derived_seed(cfg.master_seed, cell_id),
            ),
            model_seed=derived_seed(cfg.master_seed, cell_id + ":init"),
            feature_grid=cfg.feature_grid, hidden_sizes=cfg.hidden_sizes,
            init_checkpoint=str(pretrained_paths[(eps, seed)]) if pre else None,
        ))
    for size, seed in product(cfg.set_sizes, cfg.seeds):
        cell_id = f"reg-size{size}-seed{seed}"
        path, train_ds, val_bundle, _ = bundles[("size", size)]
        n_modes = train_ds.onroad.shape[1]
        config = {
            "kind": "reg", "epsilon": None, "set_size": size, "loss_variant": "ce",
            "lambda": 0.0, "data_fraction": 1.0, "pretrained": 0, "seed": seed,
            "n_modes": n_modes, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "lr0": cfg.lr0, "lr_decay": cfg.lr_decay, "alpha": cfg.alpha,
            "master_seed": cfg.master_seed, "split_seed": cfg.split_seed,
        }
        cell_dir = out / "cells" / cell_id
        done = _completed_payload(cell_dir, config)
        if done is not None:
            payloads.append(done)
            continue
        tasks.append(_CellTask(
            cell_id=cell_id, kind="reg", cell_dir=str(cell_dir), config=config,
            set_path=str(path), train_ds=train_ds, val=val_bundle,
            train_cfg=TrainConfig(
                epochs=cfg.epochs, batch_size=cfg.batch_size, lr0=cfg.lr0, lr_decay=cfg.lr_decay,
                alpha_regression=cfg.alpha, seed=derived_seed(cfg.master_seed, cell_id),
            ),
            model_seed=derived_seed(cfg.master_seed, cell_id + ":init"),
            feature_grid=cfg.feature_grid, hidden_sizes=cfg.hidden_sizes,
        ))

    workers = int(os.environ.get("TRAJCOVER_THREADS", "1") or "1")
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            payloads.extend(pool.map(_run_cell, tasks))
    else:
        payloads.extend(_run_cell(task) for task in tasks)

    payloads.sort(key=lambda p: p["cell_id"])
    serialize.write_csv(out / "summary.csv", SUMMARY_HEADER, [_summary_row(p) for p in payloads])
    _emit_plots(payloads, cfg, out / "plots")
    failed = [p["cell_id"] for p in payloads if p["status"] != "ok"]
    if failed:
        print(f"{len(failed)} cell(s) failed: {', '.join(failed)}")
        return 4
    return 0
