"""Planar geometry: frames, polygon containment, trajectory distances.

Coordinates are meters, angles radians CCW from +x. The agent frame has +x
along the agent's heading and +y to its left. Polygon containment is
boundary-inclusive, so trajectories touching the road edge still count as
on-road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GLOBAL_FRAME = "global"
AGENT_FRAME = "agent"

_BOUNDARY_TOL = 1e-9  # meters of perpendicular slack for "on the edge"
_CHUNK = 8192


def normalize_angle(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(yaw, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


@dataclass(frozen=True)
class Pose2:
    """Planar pose; yaw is normalized to (-pi, pi] on construction."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError("Pose2 fields must be finite")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Trajectory:
    """Ordered 2-D waypoints sampled every `dt` seconds in a named frame."""

    points: np.ndarray
    dt: float
    frame: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"trajectory points must have shape (N, 2) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory points must be finite")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.frame not in (GLOBAL_FRAME, AGENT_FRAME):
            raise ValueError(f"unknown frame {self.frame!r}")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _ring_array(ring) -> np.ndarray:
    arr = np.asarray(ring, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("polygon rings need at least 3 (x, y) vertices")
    if not np.all(np.isfinite(arr)):
        raise ValueError("polygon vertices must be finite")
    return arr


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class PolygonSet:
    """Union of simple polygons with optional holes (e.g. a drivable area).

    Outer rings are stored CCW and holes CW; input rings are reoriented as
    needed. Self-intersecting rings are not detected or repaired.
    """

    polygons: tuple
    holes: tuple

    def __init__(self, polygons, holes=None):
        outers = []
        for ring in polygons:
            arr = _ring_array(ring)
            if _signed_area(arr) < 0:
                arr = arr[::-1]
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            outers.append(arr)
        if holes is None:
            holes = [[] for _ in outers]
        if len(holes) != len(outers):
            raise ValueError("holes must provide one (possibly empty) list per polygon")
        hole_rings = []
        for ring_list in holes:
            fixed = []
            for ring in ring_list:
                arr = _ring_array(ring)
                if _signed_area(arr) > 0:
                    arr = arr[::-1]
                arr = np.ascontiguousarray(arr)
                arr.setflags(write=False)
                fixed.append(arr)
            hole_rings.append(tuple(fixed))
        object.__setattr__(self, "polygons", tuple(outers))
        object.__setattr__(self, "holes", tuple(hole_rings))

    @property
    def n_polygons(self) -> int:
        return len(self.polygons)


def transform_to_frame(traj: Trajectory, pose: Pose2, direction: str) -> Trajectory:
    """Rigidly map a trajectory between the global frame and `pose`'s frame.

    direction "to_global" expects an agent-frame trajectory and returns
    p_global = R(yaw) @ p + (x, y); "to_agent" inverts that. The round trip
    is the identity to within float rounding.
    """
    rot = pose.rotation()
    trans = pose.translation()
    if direction == "to_global":
        if traj.frame != AGENT_FRAME:
            raise ValueError(f"to_global requires an agent-frame trajectory, got {traj.frame!r}")
        pts = traj.points @ rot.T + trans
        return Trajectory(pts, traj.dt, GLOBAL_FRAME)
    if direction == "to_agent":
        if traj.frame != GLOBAL_FRAME:
            raise ValueError(f"to_agent requires a global-frame trajectory, got {traj.frame!r}")
        pts = (traj.points - trans) @ rot
        return Trajectory(pts, traj.dt, AGENT_FRAME)
    raise ValueError(f"direction must be 'to_agent' or 'to_global', got {direction!r}")


def _crossings_parity(points: np.ndarray, rings) -> np.ndarray:
    """Even-odd crossing parity of `points` against a list of rings."""
    parity = np.zeros(points.shape[0], dtype=bool)
    px, py = points[:, 0:1], points[:, 1:2]
    for ring in rings:
        x1, y1 = ring[:, 0], ring[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        straddles = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_int = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossed = straddles & (px < x_int)
        parity ^= (np.count_nonzero(crossed, axis=1) % 2).astype(bool)
    return parity


def _on_boundary(points: np.ndarray, rings) -> np.ndarray:
    on = np.zeros(points.shape[0], dtype=bool)
    for ring in rings:
        a = ring
        b = np.roll(ring, -1, axis=0)
        ab = b - a
        seg_len = np.hypot(ab[:, 0], ab[:, 1])
        ap = points[:, None, :] - a[None, :, :]
        cross = ap[:, :, 0] * ab[None, :, 1] - ap[:, :, 1] * ab[None, :, 0]
        dot = ap[:, :, 0] * ab[None, :, 0] + ap[:, :, 1] * ab[None, :, 1]
        near_line = np.abs(cross) <= _BOUNDARY_TOL * np.maximum(seg_len, _BOUNDARY_TOL)
        within = (dot >= -_BOUNDARY_TOL * seg_len) & (dot <= seg_len**2 + _BOUNDARY_TOL * seg_len)
        on |= np.any(near_line & within, axis=1)
    return on


def points_in_polygons(points: np.ndarray, area: PolygonSet) -> np.ndarray:
    """Boundary-inclusive containment test for an (M, 2) array of points.

    A point is inside if it falls in any polygon (outside that polygon's
    holes) or lies on any ring of the set. Returns a boolean (M,) array.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("points must have shape (M, 2)")
    result = np.zeros(points.shape[0], dtype=bool)
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        inside = np.zeros(block.shape[0], dtype=bool)
        for outer, holes in zip(area.polygons, area.holes):
            rings = (outer, *holes)
            inside |= _crossings_parity(block, rings) | _on_boundary(block, rings)
        result[start : start + _CHUNK] = inside
    return result


def point_in_polygons(p, area: PolygonSet) -> bool:
    """True iff point (x, y) lies in the polygon set (boundary counts as inside)."""
    return bool(points_in_polygons(np.asarray(p, dtype=float).reshape(1, 2), area)[0])


def densify(points: np.ndarray, step: float) -> np.ndarray:
    """Waypoints plus interior samples so consecutive samples are <= step apart."""
    if not (step > 0):
        raise ValueError("step must be positive")
    points = np.asarray(points, dtype=float)
    if points.shape[0] == 1:
        return points.copy()
    out = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        seg = b - a
        n = max(1, int(math.ceil(math.hypot(seg[0], seg[1]) / step)))
        ts = np.arange(1, n + 1)[:, None] / n
        out.append(a + ts * seg)
    return np.concatenate(out, axis=0)


def trajectory_on_road(traj: Trajectory, area: PolygonSet, sample_step: float = 0.25) -> bool:
    """True iff the whole polyline stays inside `area`.

    Every waypoint and every interpolated point at <= sample_step spacing
    along each segment must pass the containment test; waypoint-only checks
    miss segments that cut polygon notches.
    """
    if traj.frame != GLOBAL_FRAME:
        raise ValueError("trajectory_on_road expects a global-frame trajectory")
    samples = densify(traj.points, sample_step)
    return bool(np.all(points_in_polygons(samples, area)))


def _check_same_length(a: Trajectory, b: Trajectory):
    if a.n_points != b.n_points:
        raise ValueError(f"trajectories differ in length: {a.n_points} vs {b.n_points}")


def pointwise_l2(a: Trajectory, b: Trajectory) -> np.ndarray:
    _check_same_length(a, b)
    d = a.points - b.points
    return np.hypot(d[:, 0], d[:, 1])


def mean_l2(a: Trajectory, b: Trajectory) -> float:
    """Average of point-wise Euclidean distances between equal-length trajectories."""
    return float(np.mean(pointwise_l2(a, b)))


def max_l2(a: Trajectory, b: Trajectory) -> float:
    """Maximum point-wise Euclidean distance between equal-length trajectories."""
    return float(np.max(pointwise_l2(a, b)))
