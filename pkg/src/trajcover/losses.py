"""Training losses over trajectory-set logits, with analytic gradients.

Covers the classification cross-entropy and its weighted variants (targets
spread over modes near the ground truth), the drivable-area auxiliary loss,
and the anchor-plus-residual ordinal-regression loss. Every function
returns loss values together with gradients w.r.t. the network outputs;
the gradients are exact and unit-tested against finite differences.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .geometry import Trajectory
from .trajset import TrajectorySet, closest_match

_DIST_CLAMP = 1e-6  # meters; keeps inverse-distance weights finite
_PROB_CLAMP = 1e-12

LOSS_VARIANTS = ("ce", "wce_max", "wce_mean", "avoid_nearby")


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def softmax(logits) -> np.ndarray:
    """Stable softmax over a logit vector (max-subtracted before exp)."""
    x = _as_vector(logits, "logits")
    z = np.exp(x - x.max())
    return z / z.sum()


def log_softmax(logits) -> np.ndarray:
    x = _as_vector(logits, "logits")
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def one_hot(index: int, size: int) -> np.ndarray:
    target = np.zeros(size)
    target[index] = 1.0
    return target


def _check_target(target: np.ndarray):
    if np.any(target < 0):
        raise ValueError("target distribution must be nonnegative")
    if abs(target.sum() - 1.0) > 1e-9:
        raise ValueError(f"target distribution must sum to 1, got {target.sum()!r}")


def ce_loss(logits, target) -> tuple[float, np.ndarray]:
    """Cross entropy of softmax(logits) against a target distribution.

    Returns (loss, d loss / d logits) with the closed-form gradient
    softmax(logits) - target.
    """
    x = _as_vector(logits, "logits")
    w = _as_vector(target, "target")
    if x.shape != w.shape:
        raise ValueError("logits and target must have the same length")
    _check_target(w)
    loss = float(-(w * log_softmax(x)).sum())
    return loss, softmax(x) - w


def wce_target(distances, threshold: float, variant: str = "inverse_dist") -> tuple[np.ndarray, bool]:
    """Inverse-distance target distribution over modes within `threshold`.

    Modes farther than the threshold get zero weight; the rest get weight
    1/max(d, 1e-6), normalized to sum to 1. If no mode is within the
    threshold the target degrades to one-hot on the closest mode and the
    second return value flags the fallback.
    """
    if variant != "inverse_dist":
        raise ValueError(f"unknown wce variant {variant!r}")
    d = _as_vector(distances, "distances")
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    close = d <= threshold
    if not close.any():
        return one_hot(int(np.argmin(d)), d.shape[0]), True
    raw = np.where(close, 1.0 / np.maximum(d, _DIST_CLAMP), 0.0)
    return raw / raw.sum(), False


def avoid_nearby_target(distances, exclusion: float = 2.0, set_size: int | None = None) -> np.ndarray:
    """Diversity-preserving target: weight 1 on the closest mode, 0 on its
    near-duplicates within `exclusion` meters of the ground truth, 1/set_size
    on everything else; normalized to sum to 1."""
    d = _as_vector(distances, "distances")
    k = d.shape[0] if set_size is None else int(set_size)
    if k < 1:
        raise ValueError("set_size must be >= 1")
    closest = int(np.argmin(d))
    raw = np.full(d.shape[0], 1.0 / k)
    raw[d <= exclusion] = 0.0
    raw[closest] = 1.0
    return raw / raw.sum()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def offroad_loss(logits, mask) -> tuple[float, np.ndarray]:
    """Per-mode binary cross entropy pushing sigmoid(logit_k) toward the
    on-road indicator r_k; gradient is sigmoid(logits) - mask. Log arguments
    are clamped at 1e-12."""
    x = _as_vector(logits, "logits")
    r = _as_vector(mask, "mask")
    if x.shape != r.shape:
        raise ValueError("logits and mask must have the same length")
    if not np.all((r == 0.0) | (r == 1.0)):
        raise ValueError("mask entries must be 0 or 1")
    p = _sigmoid(x)
    q = _sigmoid(-x)  # 1 - p, computed stably
    loss = float(-(r * np.log(np.maximum(p, _PROB_CLAMP)) + (1.0 - r) * np.log(np.maximum(q, _PROB_CLAMP))).sum())
    return loss, p - r


def total_loss(logits, target, mask, lam: float) -> tuple[float, np.ndarray]:
    """Classification term plus lam times the off-road term; gradients add."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    ce, ce_grad = ce_loss(logits, target)
    off, off_grad = offroad_loss(logits, mask)
    return ce + lam * off, ce_grad + lam * off_grad


def smooth_l1(x, beta: float = 1.0):
    """Huber-style loss: 0.5 x^2 / beta inside |x| < beta, |x| - beta/2 outside."""
    if not (beta > 0):
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < beta, 0.5 * x * x / beta, np.abs(x) - 0.5 * beta)
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x, beta: float = 1.0):
    if not (beta > 0):
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < beta, x / beta, np.sign(x))
    return float(out) if out.ndim == 0 else out


class OrdinalLossResult(NamedTuple):
    loss: float
    grad_logits: np.ndarray
    grad_residuals: np.ndarray
    matched_index: int


def ordinal_regression_loss(
    logits,
    residuals,
    tset: TrajectorySet,
    ground_truth: Trajectory,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> OrdinalLossResult:
    """Anchor classification plus residual regression for the matched anchor.

    The positive anchor k* is the member closest to the ground truth (mean
    point-wise distance). The loss is cross entropy on the anchor logits
    against one-hot k*, plus alpha times the smooth-l1 penalty, summed over
    the 2N coordinates, between the predicted residual of k* and the true
    residual ground_truth - anchor_{k*}. Residual gradients are zero for
    every anchor except k*.
    """
    x = _as_vector(logits, "logits")
    res = np.asarray(residuals, dtype=float)
    k, n = len(tset), tset.n_points
    if x.shape[0] != k:
        raise ValueError(f"logits length {x.shape[0]} != set size {k}")
    if res.shape != (k, n, 2):
        raise ValueError(f"residuals must have shape {(k, n, 2)}, got {res.shape}")
    matched = closest_match(tset, ground_truth)
    ce, grad_logits = ce_loss(x, one_hot(matched, k))
    true_residual = ground_truth.points - tset.points[matched]
    diff = res[matched] - true_residual
    reg = float(smooth_l1(diff, beta).sum())
    grad_res = np.zeros_like(res)
    grad_res[matched] = alpha * smooth_l1_grad(diff, beta)
    return OrdinalLossResult(ce + alpha * reg, grad_logits, grad_res, matched)
