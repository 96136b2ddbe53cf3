"""Shared fixtures and oracle helpers for the test suite."""

import math

import numpy as np
import pytest

from trajcover.geometry import PolygonSet, Pose2, Trajectory
from trajcover.raster import AgentState, AgentTrack, SceneContext, SceneMap


def rel_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=float).ravel()
    numeric = np.asarray(numeric, dtype=float).ravel()
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f at x, coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * h)
    return grad


def winding_number_inside(point, ring) -> bool:
    """Independent winding-number containment oracle (strict interior)."""
    px, py = point
    wn = 0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        is_left = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
        if y1 <= py:
            if y2 > py and is_left > 0:
                wn += 1
        elif y2 <= py and is_left < 0:
            wn -= 1
    return wn != 0


def straight_trajectory(offset_y: float, n: int = 5, dt: float = 0.5, frame: str = "agent") -> Trajectory:
    return Trajectory([[float(x), offset_y] for x in range(n)], dt, frame)


def rect_ring(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


@pytest.fixture
def unit_square() -> PolygonSet:
    return PolygonSet([rect_ring(0.0, 0.0, 1.0, 1.0)])


def make_scene(
    scene_id="scene-test",
    drivable=None,
    lanes=(),
    extra_agents=(),
    target_pose=(0.0, 0.0, 0.0),
    speed=5.0,
    accel=0.0,
    yaw_rate=0.0,
    history_window=2.0,
    horizon=3.0,
    freq=2.0,
    future=None,
    n_history=None,
):
    """Build a minimal valid SceneContext with a stationary-pose history."""
    if drivable is None:
        drivable = PolygonSet([rect_ring(-100.0, -100.0, 100.0, 100.0)])
    x, y, yaw = target_pose
    dt = 1.0 / freq
    n_hist = int(round(history_window * freq)) if n_history is None else n_history
    states = tuple(
        AgentState(history_window - (n_hist - i) * dt, x, y, yaw, speed, accel, yaw_rate, 4.5, 2.0)
        for i in range(n_hist)
    ) + (AgentState(history_window, x, y, yaw, speed, accel, yaw_rate, 4.5, 2.0),)
    target = AgentTrack("target", "vehicle", states)
    return SceneContext(
        scene_id=scene_id,
        scene_map=SceneMap(drivable, tuple(np.asarray(l, dtype=float) for l in lanes)),
        agents=(target, *extra_agents),
        target_id="target",
        t_now=history_window,
        history_window=history_window,
        prediction_horizon=horizon,
        freq=freq,
        future=future,
    )


def history_track(agent_id, kind, positions, t_now, freq, yaw=0.0, length=4.5, width=2.0):
    """Track whose states end at t_now with the given (x, y) positions."""
    dt = 1.0 / freq
    n = len(positions)
    states = tuple(
        AgentState(t_now - (n - 1 - i) * dt, float(px), float(py), yaw, 1.0, 0.0, 0.0, length, width)
        for i, (px, py) in enumerate(positions)
    )
    return AgentTrack(agent_id, kind, states)
