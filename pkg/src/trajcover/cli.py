"""Command-line interface: scene synthesis, set building, rasterization,
baselines, training, evaluation, and experiment sweeps.

Exit codes: 0 success, 2 configuration error (bad flags or values),
3 data error (missing or malformed input files), 4 sweep with failed cells.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, serialize
from .model import Model, ModelConfig, TrainConfig, build_dataset, load_model, predict_topk, pretrain_map_only, save_model, train
from .physics import MODELS, physics_oracle, rollout
from .plots import save_svg, trajectory_set_svg
from .raster import render, write_png, write_ppm
from .sweep import EVAL_CSV_HEADER, SweepConfig, run_sweep
from .synthdata import ROAD_KINDS, ScenarioSpec, future_in_agent_frame, generate, load_scenes, read_scene, save_scenes
from .trajset import build_set, build_set_of_size, load_set, save_set, set_stats


class DataError(Exception):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")

def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")

def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip() != "")


def _grid(text: str) -> tuple:
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


def _load_scenes(path):
    try:
        return load_scenes(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load scenes from {path}: {exc}") from exc


def _load_set(path):
    try:
        return load_set(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load trajectory set {path}: {exc}") from exc


def _load_model(path):
    try:
        return load_model(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load model checkpoint {path}: {exc}") from exc


def _candidates(scenes):
    try:
        return [future_in_agent_frame(ctx) for ctx in scenes]
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_synth(args) -> int:
    spec = ScenarioSpec(
        seed=args.seed, n_scenes=args.n_scenes, road_kinds=args.roads,
        lane_width=args.lane_width, speed_range=(args.speed_min, args.speed_max),
        history_window=args.history, prediction_horizon=args.horizon, freq=args.freq,
        lateral_noise=args.noise, corridor_margin=args.margin,
        two_lane_prob=args.two_lane_prob, max_distractors=args.max_distractors,
    )
    scenes = generate(spec)
    paths = save_scenes(scenes, args.out)
    manifest = {
        "spec": {
            "seed": spec.seed, "n_scenes": spec.n_scenes, "road_kinds": list(spec.road_kinds),
            "lane_width": spec.lane_width, "speed_range": list(spec.speed_range),
            "history_window": spec.history_window, "prediction_horizon": spec.prediction_horizon,
            "freq": spec.freq, "lateral_noise": spec.lateral_noise,
            "corridor_margin": spec.corridor_margin, "two_lane_prob": spec.two_lane_prob,
            "max_distractors": spec.max_distractors,
        },
        "files": [p.name for p in paths],
    }
    serialize.write_json(Path(args.out) / "manifest.json", manifest)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def cmd_build_set(args) -> int:
    scenes = _load_scenes(args.scenes)
    candidates = _candidates(scenes)
    if args.size is not None:
        tset = build_set_of_size(candidates, args.size, args.metric, args.max_candidates)
    else:
        tset = build_set(candidates, args.epsilon, args.metric, args.max_candidates)
    save_set(tset, args.out)
    if args.preview_svg:
        save_svg(trajectory_set_svg(tset), args.preview_svg)
    stats = set_stats(tset)
    print(f"built set with {stats['size']} trajectories (epsilon={tset.epsilon:g} m, "
          f"{tset.coverage_metric}) from {len(candidates)} candidates -> {args.out}")
    return 0


def cmd_rasterize(args) -> int:
    try:
        ctx = read_scene(args.scene)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load scene {args.scene}: {exc}") from exc
    img = render(ctx, args.mode)
    fmt = args.format
    if fmt == "auto":
        fmt = "png" if str(args.out).lower().endswith(".png") else "ppm"
    (write_png if fmt == "png" else write_ppm)(img, args.out)
    print(f"rasterized {ctx.scene_id} ({args.mode}) -> {args.out}")
    return 0


def cmd_baseline(args) -> int:
    scenes = _load_scenes(args.scenes)
    rows = []
    for ctx in scenes:
        try:
            gt = ctx.future_trajectory()
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        result = physics_oracle(ctx.target_kinematics(), gt, ctx.prediction_horizon, ctx.freq)
        rows.append((ctx.scene_id, result.best_model, result.ade))
    serialize.write_csv(args.out, ("scene_id", "best_model", "ade"), rows)
    print(f"physics oracle over {len(rows)} scenes -> {args.out}")
    return 0


def _train_config(args, **overrides) -> TrainConfig:
    base = dict(
        epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr0,
        lr_decay=args.lr_decay, seed=args.seed,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _write_log(log_rows, path):
    serialize.write_csv(
        path, ("epoch", "step", "loss", "ce_term", "offroad_term"),
        [(r["epoch"], r["step"], r["loss"], r["ce_term"], r["offroad_term"]) for r in log_rows],
    )


def cmd_pretrain(args) -> int:
    scenes = _load_scenes(args.scenes)
    tset = _load_set(args.set)
    try:
        dataset = build_dataset(scenes, tset, args.grid, map_only=True)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model = Model(ModelConfig(tset, args.grid, args.hidden, "classification", args.seed))
    result = pretrain_map_only(model, dataset, _train_config(args))
    save_model(model, args.out)
    _write_log(result.log, args.log or str(args.out) + ".log.csv")
    print(f"pretrained on {len(scenes)} map-only scenes -> {args.out}")
    return 0


def cmd_train(args) -> int:
    scenes = _load_scenes(args.scenes)
    if args.init:
        model = _load_model(args.init)
    else:
        if not args.set:
            print("error: --set is required unless --init provides a checkpoint", file=sys.stderr)
            return 2
        tset = _load_set(args.set)
        model = Model(ModelConfig(tset, args.grid, args.hidden, args.head, args.seed))
    try:
        dataset = build_dataset(scenes, model.traj_set, model.config.feature_grid)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    cfg = _train_config(
        args, lambda_offroad=args.lambda_offroad, loss_variant=args.loss_variant,
        threshold=args.threshold, data_fraction=args.data_fraction, alpha_regression=args.alpha,
    )
    result = train(model, dataset, cfg)
    save_model(model, args.out)
    _write_log(result.log, args.log or str(args.out) + ".log.csv")
    print(f"trained {model.config.head} head on {len(scenes)} scenes "
          f"({cfg.loss_variant}, lambda={cfg.lambda_offroad:g}) -> {args.out}")
    return 0


def _physics_predictions(ctx):
    pairs = []
    for name in MODELS:
        try:
            traj = rollout(ctx.target_kinematics(), name, ctx.prediction_horizon, ctx.freq)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        pairs.append((traj, 1.0 / len(MODELS)))
    return pairs


def cmd_eval(args) -> int:
    scenes = _load_scenes(args.scenes)
    model = _load_model(args.model) if args.model else None
    rows = []
    sums = {name: [] for name in EVAL_CSV_HEADER[1:]}
    for ctx in scenes:
        try:
            gt = ctx.future_trajectory()
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        if model is not None:
            pairs = predict_topk(model, ctx, min(args.topk, len(model.traj_set)))
        else:
            pairs = _physics_predictions(ctx)
        preds = metrics.PredictionSet(tuple(pairs))
        n = len(preds)
        k5, k10 = min(5, n), min(10, n)
        row = {
            "minade1": metrics.min_ade(preds, gt, 1),
            "minade5": metrics.min_ade(preds, gt, k5),
            "minade10": metrics.min_ade(preds, gt, k10),
            "miss_5_2": metrics.miss_rate_single(preds, gt, k5, 2.0),
            "dac": metrics.dac(metrics.PredictionSet(preds.entries[:k5]), ctx.scene_map.drivable),
            "mean_mode_dist": metrics.mean_mode_distance(preds, k5) if k5 >= 2 else None,
        }
        rows.append((ctx.scene_id, *[row[name] for name in EVAL_CSV_HEADER[1:]]))
        for name, value in row.items():
            if value is not None:
                sums[name].append(value)
    aggregate = tuple(float(np.mean(sums[name])) if sums[name] else None for name in EVAL_CSV_HEADER[1:])
    rows.append(("aggregate", *aggregate))
    serialize.write_csv(args.out, EVAL_CSV_HEADER, rows)
    source = args.model if args.model else "physics baselines"
    print(f"evaluated {source} on {len(scenes)} scenes -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = SweepConfig(
        scenes_dir=args.scenes, out_dir=args.out,
        epsilons=args.epsilons, lambdas=args.lambdas, loss_variants=args.loss_variants,
        data_fractions=args.data_fractions, pretrain_flags=args.pretrain, seeds=args.seeds,
        set_sizes=args.set_sizes, metric=args.metric, epochs=args.epochs,
        batch_size=args.batch_size, lr0=args.lr0, lr_decay=args.lr_decay,
        threshold=args.threshold, alpha=args.alpha, feature_grid=args.grid,
        hidden_sizes=args.hidden, master_seed=args.seed, split_seed=args.split_seed,
        val_fraction=args.val_fraction,
    )
    try:
        code = run_sweep(cfg)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    print(f"sweep complete -> {args.out} (exit {code})")
    return code


def _add_train_flags(p, with_loss: bool):
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=_grid, default=(25, 25), metavar="RxC",
                   help="feature grid, e.g. 25x25")
    p.add_argument("--hidden", type=_ints, default=(256, 256), metavar="H1,H2,...")
    p.add_argument("--log", default=None, help="loss log CSV (default: <out>.log.csv)")
    if with_loss:
        p.add_argument("--loss-variant", choices=("ce", "wce_max", "wce_mean", "avoid_nearby"), default="ce")
        p.add_argument("--lambda", dest="lambda_offroad", type=float, default=0.0,
                       help="off-road loss weight")
        p.add_argument("--threshold", type=float, default=2.0, help="WCE distance threshold (m)")
        p.add_argument("--data-fraction", type=float, default=1.0)
        p.add_argument("--alpha", type=float, default=1.0, help="regression term weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajcover",
        description="Trajectory-set motion prediction toolkit on synthetic driving scenes.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--roads", type=_names, default=ROAD_KINDS,
                   help=f"comma list from {ROAD_KINDS}")
    p.add_argument("--lane-width", type=float, default=3.5)
    p.add_argument("--speed-min", type=float, default=3.0)
    p.add_argument("--speed-max", type=float, default=12.0)
    p.add_argument("--history", type=float, default=2.0)
    p.add_argument("--horizon", type=float, default=3.0)
    p.add_argument("--freq", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.2, help="lateral GT noise bound (m)")
    p.add_argument("--margin", type=float, default=1.0, help="drivable margin beyond lanes (m)")
    p.add_argument("--two-lane-prob", type=float, default=0.5)
    p.add_argument("--max-distractors", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-set", help="build a coverage trajectory set from scene futures")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--metric", choices=("max_l2", "mean_l2"), default="max_l2")
    p.add_argument("--size", type=int, default=None,
                   help="build a fixed-size set (farthest-first) instead of epsilon coverage")
    p.add_argument("--max-candidates", type=int, default=60_000)
    p.add_argument("--preview-svg", default=None, help="optional SVG preview of the set")
    p.set_defaults(func=cmd_build_set)

    p = sub.add_parser("rasterize", help="render one scene to an image")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("full", "map_only"), default="full")
    p.add_argument("--format", choices=("auto", "ppm", "png"), default="auto")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("baseline", help="run the physics oracle over a corpus")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("pretrain", help="map-only pretraining with the off-road loss")
    p.add_argument("--scenes", required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p, with_loss=False)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a prediction head")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", default=None, help="trajectory-set file (required without --init)")
    p.add_argument("--init", default=None, help="start from a checkpoint (e.g. pretrained)")
    p.add_argument("--head", choices=("classification", "ordinal_regression"), default="classification")
    _add_train_flags(p, with_loss=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the physics baselines")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", default=None)
    group.add_argument("--physics", action="store_true")
    p.add_argument("--topk", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an experiment grid and emit reports")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilons", type=_floats, default=(2.0,))
    p.add_argument("--lambdas", type=_floats, default=(0.0,))
    p.add_argument("--loss-variants", type=_names, default=("ce",))
    p.add_argument("--data-fractions", type=_floats, default=(1.0,))
    p.add_argument("--pretrain", type=_ints, default=(0,), help="0/1 flags, e.g. 0,1")
    p.add_argument("--seeds", type=_ints, default=(0,))
    p.add_argument("--set-sizes", type=_ints, default=(),
                   help="anchor counts for ordinal-regression cells")
    p.add_argument("--metric", choices=("max_l2", "mean_l2"), default="max_l2")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr0", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.9)
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--grid", type=_grid, default=(25, 25), metavar="RxC")
    p.add_argument("--hidden", type=_ints, default=(256, 256))
    p.add_argument("--seed", type=int, default=0, help="master seed; cell seeds derive from it")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
