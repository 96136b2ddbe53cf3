"""Kinematic baseline models and the best-of-four physics oracle.

Four extrapolations of the agent's current state: constant velocity or
acceleration crossed with constant yaw or yaw rate. All four share one
forward-Euler integrator (10 substeps per output step) so comparisons are
apples-to-apples; speed is clamped at zero so deceleration never reverses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import GLOBAL_FRAME, Pose2, Trajectory, mean_l2

MODELS = ("cv_cy", "cv_cyr", "ca_cy", "ca_cyr")

SUBSTEPS = 10


@dataclass(frozen=True)
class AgentKinematics:
    """Instantaneous planar state used to seed the baselines."""

    pose: Pose2
    speed: float
    accel: float
    yaw_rate: float

    def __post_init__(self):
        for name in ("speed", "accel", "yaw_rate"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")


def _n_steps(horizon: float, freq: float) -> int:
    if not (horizon > 0 and freq > 0):
        raise ValueError("horizon and freq must be positive")
    n = int(round(horizon * freq))
    if n < 1 or abs(n - horizon * freq) > 1e-9:
        raise ValueError(f"horizon * freq must be a positive integer, got {horizon * freq}")
    return n


def rollout_states(
    kin: AgentKinematics, model: str, horizon: float, freq: float
) -> np.ndarray:
    """Integrate the chosen model forward; rows are (x, y, yaw, speed) at
    t = dt, 2*dt, ..., horizon (the seed state at t=0 is not included)."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    n = _n_steps(horizon, freq)
    accel = kin.accel if model.startswith("ca") else 0.0
    yaw_rate = kin.yaw_rate if model.endswith("cyr") else 0.0
    h = 1.0 / freq / SUBSTEPS
    x, y, yaw, v = kin.pose.x, kin.pose.y, kin.pose.yaw, kin.speed
    out = np.empty((n, 4))
    for i in range(n):
        for _ in range(SUBSTEPS):
            nx = x + v * math.cos(yaw) * h
            ny = y + v * math.sin(yaw) * h
            nyaw = yaw + yaw_rate * h
            nv = max(v + accel * h, 0.0)
            x, y, yaw, v = nx, ny, nyaw, nv
        out[i] = (x, y, yaw, v)
    return out


def rollout(kin: AgentKinematics, model: str, horizon: float, freq: float) -> Trajectory:
    """Global-frame trajectory of the chosen model (horizon*freq points at dt=1/freq)."""
    states = rollout_states(kin, model, horizon, freq)
    return Trajectory(states[:, :2], 1.0 / freq, GLOBAL_FRAME)


class OracleResult(NamedTuple):
    best_model: str
    ade: float


def physics_oracle(
    kin: AgentKinematics, ground_truth: Trajectory, horizon: float, freq: float
) -> OracleResult:
    """Best of the four baselines against the ground truth.

    Returns the model with minimum average point-wise Euclidean distance;
    exact ties resolve to the first model in MODELS order.
    """
    if ground_truth.frame != GLOBAL_FRAME:
        raise ValueError("physics_oracle expects a global-frame ground truth")
    n = _n_steps(horizon, freq)
    if ground_truth.n_points != n:
        raise ValueError(f"ground truth has {ground_truth.n_points} points, expected {n}")
    if not math.isclose(ground_truth.dt, 1.0 / freq, rel_tol=1e-9):
        raise ValueError(f"ground truth dt {ground_truth.dt} inconsistent with freq {freq}")
    ades = [mean_l2(rollout(kin, m, horizon, freq), ground_truth) for m in MODELS]
    best = int(np.argmin(ades))
    return OracleResult(MODELS[best], ades[best])
