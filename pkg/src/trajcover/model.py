"""Trainable prediction head over raster features, plus the training engine.

The head is a small fully connected network on downsampled raster features
concatenated with the agent's speed, acceleration and yaw rate. It carries
either a classification output (one logit per trajectory-set member) or an
ordinal-regression output (logits plus per-anchor waypoint residuals).
Training is plain SGD with a multiplicative learning-rate decay per epoch;
everything is seeded and bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import losses, serialize
from .geometry import Trajectory, transform_to_frame
from .raster import DEFAULT_RASTER, RasterConfig, SceneContext, downsample_features, render
from .trajset import TrajectorySet, distances_to, onroad_mask
from .synthdata import future_in_agent_frame

HEADS = ("classification", "ordinal_regression")

KINEMATIC_INPUTS = 3  # speed, accel, yaw rate
# fixed normalizers keeping the kinematic inputs O(1), like the raster
# features; raw speeds otherwise dwarf the [0, 1] pixel means
KIN_SCALE = np.array([15.0, 2.0, 0.5])


@dataclass(frozen=True)
class ModelConfig:
    traj_set: TrajectorySet
    feature_grid: tuple = (25, 25)
    hidden_sizes: tuple = (256, 256)
    head: str = "classification"
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        rows, cols = self.feature_grid
        if rows < 1 or cols < 1:
            raise ValueError("feature_grid entries must be >= 1")
        object.__setattr__(self, "feature_grid", (int(rows), int(cols)))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    @property
    def input_dim(self) -> int:
        rows, cols = self.feature_grid
        return rows * cols * 3 + KINEMATIC_INPUTS

    @property
    def output_dim(self) -> int:
        k = len(self.traj_set)
        if self.head == "classification":
            return k
        return k * (2 * self.traj_set.n_points + 1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr0: float = 1e-3
    lr_decay: float = 0.9
    lambda_offroad: float = 0.0
    loss_variant: str = "ce"
    threshold: float = 2.0
    data_fraction: float = 1.0
    seed: int = 0
    alpha_regression: float = 1.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr0 <= 0 or self.lr_decay <= 0:
            raise ValueError("lr0 and lr_decay must be positive")
        if self.lambda_offroad < 0:
            raise ValueError("lambda_offroad must be >= 0")
        if self.loss_variant not in losses.LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")
        if not (0.0 < self.data_fraction <= 1.0):
            raise ValueError("data_fraction must be in (0, 1]")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based epoch: lr0 * decay ** epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay**epoch


class Model:
    """Fully connected head; hidden layers use ReLU, the output is linear."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = np.random.default_rng(config.seed)
        dims = [config.input_dim, *config.hidden_sizes, config.output_dim]
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def traj_set(self) -> TrajectorySet:
        return self.config.traj_set

    def forward_batch(self, x: np.ndarray, with_cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"input must have shape (B, {self.config.input_dim}), got {x.shape}")
        pre: list[np.ndarray] = []
        acts = [x]
        out = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = out @ w.T + b
            pre.append(z)
            out = z if i == last else np.maximum(z, 0.0)
            acts.append(out)
        if with_cache:
            return out, (pre, acts)
        return out

    def forward(self, features: np.ndarray, kinematics) -> np.ndarray:
        """Single-example forward; kinematics is (speed, accel, yaw_rate)."""
        x = np.concatenate([np.asarray(features, dtype=float), np.asarray(kinematics, dtype=float)])
        return self.forward_batch(x[None, :])[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Gradients of a scalar loss w.r.t. every weight and bias, given the
        loss gradient at the network output."""
        pre, acts = cache
        grads_w = [np.empty(0)] * len(self.weights)
        grads_b = [np.empty(0)] * len(self.biases)
        delta = np.asarray(grad_out, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = delta.T @ acts[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i]) * (pre[i - 1] > 0.0)
        return grads_w, grads_b

    def sgd_step(self, grads, lr: float):
        grads_w, grads_b = grads
        for i in range(len(self.weights)):
            self.weights[i] -= lr * grads_w[i]
            self.biases[i] -= lr * grads_b[i]

    def split_output(self, out: np.ndarray):
        """(logits, residuals) view of a batched output; residuals is None
        for the classification head."""
        k = len(self.traj_set)
        if self.config.head == "classification":
            return out, None
        n = self.traj_set.n_points
        return out[:, :k], out[:, k:].reshape(out.shape[0], k, n, 2)


@dataclass
class SceneDataset:
    """Precomputed per-scene training arrays (feature building is the slow
    part, so it happens once per corpus)."""

    features: np.ndarray
    kin: np.ndarray
    onroad: np.ndarray
    scene_ids: list
    mean_dists: np.ndarray | None = None
    max_dists: np.ndarray | None = None
    closest: np.ndarray | None = None
    gt_agent: np.ndarray | None = None

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.features, self.kin], axis=1)


def kinematic_features(ctx: SceneContext) -> np.ndarray:
    k = ctx.target_kinematics()
    return np.array([k.speed, k.accel, k.yaw_rate]) / KIN_SCALE


def build_dataset(
    scenes,
    tset: TrajectorySet,
    feature_grid: tuple = (25, 25),
    map_only: bool = False,
    sample_step: float = 0.25,
    raster_cfg: RasterConfig = DEFAULT_RASTER,
) -> SceneDataset:
    """Render every scene and assemble model inputs, on-road masks, and
    (unless map_only) ground-truth labels against the trajectory set."""
    if not scenes:
        raise ValueError("scenes must be nonempty")
    feats, kins, masks, ids = [], [], [], []
    mean_d, max_d, gts = [], [], []
    for ctx in scenes:
        mode = "map_only" if map_only else "full"
        feats.append(downsample_features(render(ctx, mode, raster_cfg), feature_grid))
        kins.append(kinematic_features(ctx))
        masks.append(onroad_mask(tset, ctx.target_pose(), ctx.scene_map.drivable, sample_step))
        ids.append(ctx.scene_id)
        if not map_only:
            gt = future_in_agent_frame(ctx)
            mean_d.append(distances_to(tset, gt, "mean_l2"))
            max_d.append(distances_to(tset, gt, "max_l2"))
            gts.append(gt.points)
    ds = SceneDataset(
        features=np.array(feats),
        kin=np.array(kins),
        onroad=np.array(masks),
        scene_ids=ids,
    )
    if not map_only:
        ds.mean_dists = np.array(mean_d)
        ds.max_dists = np.array(max_d)
        ds.closest = np.argmin(ds.mean_dists, axis=1)
        ds.gt_agent = np.array(gts)
    return ds


def classification_targets(dataset: SceneDataset, cfg: TrainConfig) -> np.ndarray:
    """Per-example target distributions for the configured loss variant."""
    if dataset.mean_dists is None:
        raise ValueError("dataset carries no ground-truth labels")
    n, k = dataset.mean_dists.shape
    targets = np.zeros((n, k))
    if cfg.loss_variant == "ce":
        targets[np.arange(n), dataset.closest] = 1.0
    elif cfg.loss_variant == "wce_max":
        for i in range(n):
            targets[i], _ = losses.wce_target(dataset.max_dists[i], cfg.threshold)
    elif cfg.loss_variant == "wce_mean":
        for i in range(n):
            targets[i], _ = losses.wce_target(dataset.mean_dists[i], cfg.threshold)
    elif cfg.loss_variant == "avoid_nearby":
        for i in range(n):
            targets[i] = losses.avoid_nearby_target(dataset.mean_dists[i], cfg.threshold)
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(cfg.loss_variant)
    return targets


def _batch_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _batch_log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _batch_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _offroad_terms(logits, mask):
    sig = _batch_sigmoid(logits)
    q = _batch_sigmoid(-logits)
    per_example = -(
        mask * np.log(np.maximum(sig, 1e-12)) + (1.0 - mask) * np.log(np.maximum(q, 1e-12))
    ).sum(axis=1)
    return per_example, sig - mask


class TrainResult(NamedTuple):
    model: Model
    log: list  # dict rows: epoch, step, loss, ce_term, offroad_term


def _select_subset(n: int, cfg: TrainConfig, rng) -> np.ndarray:
    n_use = int(math.ceil(cfg.data_fraction * n))
    return rng.permutation(n)[:n_use]


def train(model: Model, dataset: SceneDataset, cfg: TrainConfig) -> TrainResult:
    """SGD over seeded shuffled minibatches of the configured loss.

    Classification: loss variant target plus lambda * off-road term.
    Ordinal regression: cross entropy on the matched anchor plus alpha *
    smooth-l1 on its residual; the off-road term applies to the anchor
    logits only. Identical (seed, config, data) reproduce identical weights.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    if dataset.mean_dists is None:
        raise ValueError("training needs ground-truth labels; use pretrain_map_only otherwise")
    rng = np.random.default_rng(cfg.seed)
    subset = _select_subset(len(dataset), cfg, rng)
    x_all = dataset.inputs[subset]
    mask_all = dataset.onroad[subset]
    is_ordinal = model.config.head == "ordinal_regression"
    k = len(model.traj_set)
    if is_ordinal:
        closest = dataset.closest[subset]
        resid_target = dataset.gt_agent[subset] - model.traj_set.points[closest]
        targets = np.zeros((subset.size, k))
        targets[np.arange(subset.size), closest] = 1.0
    else:
        targets = classification_targets(dataset, cfg)[subset]

    log: list = []
    step = 0
    lam, alpha, beta = cfg.lambda_offroad, cfg.alpha_regression, cfg.smooth_l1_beta
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(subset.size)
        for start in range(0, subset.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            b = batch.size
            out, cache = model.forward_batch(x_all[batch], with_cache=True)
            logits, residuals = model.split_output(out)
            probs = _batch_softmax(logits)
            ce_vec = -(targets[batch] * _batch_log_softmax(logits)).sum(axis=1)
            grad_logits = (probs - targets[batch]) / b
            off_term = 0.0
            if lam > 0:
                off_vec, off_grad = _offroad_terms(logits, mask_all[batch])
                off_term = float(off_vec.mean())
                grad_logits = grad_logits + lam * off_grad / b
            loss_val = float(ce_vec.mean()) + lam * off_term
            if is_ordinal:
                diff = residuals[np.arange(b), closest[batch]] - resid_target[batch]
                loss_val += alpha * float(losses.smooth_l1(diff, beta).sum(axis=(1, 2)).mean())
                grad_res = np.zeros_like(residuals)
                grad_res[np.arange(b), closest[batch]] = alpha * losses.smooth_l1_grad(diff, beta) / b
                grad_out = np.concatenate([grad_logits, grad_res.reshape(b, -1)], axis=1)
            else:
                grad_out = grad_logits
            model.sgd_step(model.backward(cache, grad_out), lr)
            log.append(
                {"epoch": epoch, "step": step, "loss": loss_val,
                 "ce_term": float(ce_vec.mean()), "offroad_term": off_term}
            )
            step += 1
    return TrainResult(model, log)


def pretrain_map_only(model: Model, map_dataset: SceneDataset, cfg: TrainConfig) -> TrainResult:
    """Optimize the off-road term alone on agent-free rasters.

    The on-road mask depends only on the map and the agent pose, so no
    recorded futures are needed; classification targets are never consulted.
    """
    if len(map_dataset) == 0:
        raise ValueError("dataset must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    subset = _select_subset(len(map_dataset), cfg, rng)
    x_all = map_dataset.inputs[subset]
    mask_all = map_dataset.onroad[subset]
    log: list = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(subset.size)
        for start in range(0, subset.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            b = batch.size
            out, cache = model.forward_batch(x_all[batch], with_cache=True)
            logits, residuals = model.split_output(out)
            off_vec, off_grad = _offroad_terms(logits, mask_all[batch])
            grad_logits = off_grad / b
            if residuals is not None:
                grad_out = np.concatenate(
                    [grad_logits, np.zeros((b, residuals[0].size))], axis=1
                )
            else:
                grad_out = grad_logits
            model.sgd_step(model.backward(cache, grad_out), lr)
            log.append(
                {"epoch": epoch, "step": step, "loss": float(off_vec.mean()),
                 "ce_term": 0.0, "offroad_term": float(off_vec.mean())}
            )
            step += 1
    return TrainResult(model, log)


def scene_inputs(ctx: SceneContext, feature_grid, raster_cfg: RasterConfig = DEFAULT_RASTER) -> np.ndarray:
    feats = downsample_features(render(ctx, "full", raster_cfg), feature_grid)
    return np.concatenate([feats, kinematic_features(ctx)])


def predict_topk(model: Model, ctx: SceneContext, k: int, raster_cfg: RasterConfig = DEFAULT_RASTER) -> list:
    """Top-k (global-frame trajectory, probability) pairs, most likely first.

    Classification returns set members; the regression head adds each
    anchor's predicted residual. Probability ties keep index order.
    """
    tset = model.traj_set
    if not (1 <= k <= len(tset)):
        raise ValueError(f"k must be in [1, {len(tset)}], got {k}")
    out = model.forward_batch(scene_inputs(ctx, model.config.feature_grid, raster_cfg)[None, :])
    logits, residuals = model.split_output(out)
    probs = losses.softmax(logits[0])
    order = np.argsort(-probs, kind="stable")[:k]
    pose = ctx.target_pose()
    result = []
    for idx in order:
        pts = tset.points[idx]
        if residuals is not None:
            pts = pts + residuals[0, idx]
        traj = transform_to_frame(Trajectory(pts, tset.dt, "agent"), pose, "to_global")
        result.append((traj, float(probs[idx])))
    return result


def save_model(model: Model, path) -> None:
    cfg = model.config
    serialize.write_json(
        path,
        {
            "format": "trajcover-model-v1",
            "head": cfg.head,
            "feature_grid": list(cfg.feature_grid),
            "hidden_sizes": list(cfg.hidden_sizes),
            "seed": cfg.seed,
            "traj_set": {
                "epsilon": cfg.traj_set.epsilon,
                "metric": cfg.traj_set.coverage_metric,
                "dt": cfg.traj_set.dt,
                "n_points": cfg.traj_set.n_points,
                "trajectories": cfg.traj_set.points,
            },
            "layers": [
                {"weight": w, "bias": b} for w, b in zip(model.weights, model.biases)
            ],
        },
    )


def load_model(path) -> Model:
    raw = serialize.read_json(path)
    if raw.get("format") != "trajcover-model-v1":
        raise ValueError(f"{path} is not a model checkpoint")
    ts = raw["traj_set"]
    tset = TrajectorySet(
        np.asarray(ts["trajectories"], dtype=float), float(ts["dt"]), float(ts["epsilon"]), str(ts["metric"])
    )
    config = ModelConfig(
        traj_set=tset,
        feature_grid=tuple(raw["feature_grid"]),
        hidden_sizes=tuple(raw["hidden_sizes"]),
        head=str(raw["head"]),
        seed=int(raw["seed"]),
    )
    model = Model(config)
    layers = raw["layers"]
    if len(layers) != len(model.weights):
        raise ValueError("checkpoint layer count does not match config")
    for i, layer in enumerate(layers):
        w = np.asarray(layer["weight"], dtype=float)
        b = np.asarray(layer["bias"], dtype=float)
        if w.shape != model.weights[i].shape or b.shape != model.biases[i].shape:
            raise ValueError("checkpoint layer shapes do not match config")
        model.weights[i] = w
        model.biases[i] = b
    return model
