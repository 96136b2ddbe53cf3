"""Evaluation metrics for multimodal trajectory predictions.

minADE over the k most likely modes, a max-distance miss rate, drivable
area compliance (DAC), per-rank DAC, mode-spread diagnostics, and residual
statistics for regression heads. Aggregates over a dataset are plain means
of per-instance values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PolygonSet, Trajectory, max_l2, mean_l2, trajectory_on_road


@dataclass(frozen=True)
class PredictionSet:
    """Ordered (trajectory, probability) pairs, most probable first."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((traj, float(p)) for traj, p in self.entries)
        probs = [p for _, p in entries]
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValueError("probabilities must be non-increasing")
        if sum(probs) > 1.0 + 1e-9:
            raise ValueError("probabilities must sum to at most 1")
        lengths = {traj.n_points for traj, _ in entries}
        if len(lengths) > 1:
            raise ValueError("all predicted trajectories must share a point count")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def trajectory(self, rank: int) -> Trajectory:
        return self.entries[rank][0]

    def top(self, k: int) -> list:
        return [traj for traj, _ in self.entries[:k]]


def _check_k(preds: PredictionSet, k: int):
    if len(preds) == 0:
        raise ValueError("prediction set is empty")
    if not (1 <= k <= len(preds)):
        raise ValueError(f"k must be in [1, {len(preds)}], got {k}")


def min_ade(preds: PredictionSet, ground_truth: Trajectory, k: int) -> float:
    """Minimum over the top-k predictions of the average displacement error."""
    _check_k(preds, k)
    return min(mean_l2(traj, ground_truth) for traj in preds.top(k))


def miss_rate_single(preds: PredictionSet, ground_truth: Trajectory, k: int, d: float) -> int:
    """1 iff every top-k prediction strays more than d meters from the ground
    truth at some waypoint (a min-max distance of exactly d counts as a hit)."""
    _check_k(preds, k)
    if not (d > 0):
        raise ValueError("d must be positive")
    best = min(max_l2(traj, ground_truth) for traj in preds.top(k))
    return 0 if best <= d else 1


def dac(preds: PredictionSet, area: PolygonSet, sample_step: float = 0.25) -> float:
    """Fraction of the predictions that stay entirely on the drivable area."""
    if len(preds) == 0:
        raise ValueError("prediction set is empty")
    on = sum(trajectory_on_road(traj, area, sample_step) for traj, _ in preds.entries)
    return on / len(preds)


def dac_by_rank(preds_batch, areas, n_ranks: int | None = None, sample_step: float = 0.25) -> np.ndarray:
    """DAC computed separately per probability rank across instances.

    All prediction sets must have the same length unless n_ranks is given,
    in which case they must have at least n_ranks entries each.
    """
    preds_batch = list(preds_batch)
    areas = list(areas)
    if not preds_batch:
        raise ValueError("empty batch")
    if len(preds_batch) != len(areas):
        raise ValueError("need one drivable area per prediction set")
    if n_ranks is None:
        n_ranks = len(preds_batch[0])
        if any(len(p) != n_ranks for p in preds_batch):
            raise ValueError("ragged batch: pass n_ranks explicitly or equalize lengths")
    if any(len(p) < n_ranks for p in preds_batch):
        raise ValueError(f"every prediction set needs at least {n_ranks} entries")
    counts = np.zeros(n_ranks)
    for preds, area in zip(preds_batch, areas):
        for rank in range(n_ranks):
            counts[rank] += trajectory_on_road(preds.trajectory(rank), area, sample_step)
    return counts / len(preds_batch)


def mean_mode_distance(preds: PredictionSet, k: int = 5) -> float:
    """Mean pairwise average-displacement distance among the top-k modes;
    small values diagnose clumping."""
    if k < 2:
        raise ValueError("k must be >= 2")
    _check_k(preds, k)
    top = preds.top(k)
    dists = [mean_l2(a, b) for i, a in enumerate(top) for b in top[i + 1 :]]
    return float(np.mean(dists))


def residual_stats(model, dataset) -> tuple[float, float]:
    """Mean l1 and l-infinity norms (meters) of the matched-anchor residuals
    a regression-head model predicts over a labeled dataset.

    The per-instance residual vector (2N coordinates) of the anchor closest
    to the ground truth is reduced to mean |coordinate| and max |coordinate|,
    then both are averaged over the dataset.
    """
    if model.config.head != "ordinal_regression":
        raise ValueError("residual_stats needs an ordinal_regression head")
    if dataset.closest is None:
        raise ValueError("dataset carries no ground-truth labels")
    out = model.forward_batch(dataset.inputs)
    _, residuals = model.split_output(out)
    matched = residuals[np.arange(len(dataset)), dataset.closest]
    flat = np.abs(matched.reshape(len(dataset), -1))
    return float(flat.mean(axis=1).mean()), float(flat.max(axis=1).mean())
