"""Fixed trajectory sets: greedy coverage construction, queries, and file I/O.

A trajectory set is an ordered list of agent-frame trajectories that
approximates the space of plausible futures. Construction guarantees that
every candidate lies within `epsilon` of some member under the chosen
coverage metric; classification labels come from the closest member.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import serialize
from .geometry import AGENT_FRAME, PolygonSet, Pose2, Trajectory, densify, points_in_polygons

COVERAGE_METRICS = ("max_l2", "mean_l2")

DEFAULT_CANDIDATE_CAP = 60_000


def _reduce(dists: np.ndarray, metric: str) -> np.ndarray:
    """Collapse per-point distances over the last axis per the coverage metric."""
    if metric == "max_l2":
        return dists.max(axis=-1)
    if metric == "mean_l2":
        return dists.mean(axis=-1)
    raise ValueError(f"unknown coverage metric {metric!r}")


def _stack_candidates(candidates) -> tuple[np.ndarray, float]:
    if not candidates:
        raise ValueError("candidates must be nonempty")
    n_points = candidates[0].n_points
    dt = candidates[0].dt
    for traj in candidates:
        if traj.frame != AGENT_FRAME:
            raise ValueError("trajectory-set candidates must be in the agent frame")
        if traj.n_points != n_points or traj.dt != dt:
            raise ValueError("candidates must share point count and dt")
    return np.stack([t.points for t in candidates]), dt


def cross_distances(a: np.ndarray, b: np.ndarray, metric: str, chunk: int = 64) -> np.ndarray:
    """Distance matrix between two (·, N, 2) trajectory stacks, chunked by rows."""
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        diff = block[:, None, :, :] - b[None, :, :, :]
        out[start : start + chunk] = _reduce(np.hypot(diff[..., 0], diff[..., 1]), metric)
    return out


def _dists_to_one(stack: np.ndarray, member: np.ndarray, metric: str) -> np.ndarray:
    diff = stack - member[None, :, :]
    return _reduce(np.hypot(diff[..., 0], diff[..., 1]), metric)


@dataclass(frozen=True)
class TrajectorySet:
    """Ordered agent-frame trajectories with a coverage radius.

    points: (K, N, 2) member waypoints; dt: seconds between waypoints;
    epsilon: coverage radius in meters under coverage_metric; source_count:
    how many candidates the builder consumed (None when loaded from file).
    """

    points: np.ndarray
    dt: float
    epsilon: float
    coverage_metric: str = "max_l2"
    source_count: int | None = None
    _dense_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"set points must have shape (K, N, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("set points must be finite")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if self.coverage_metric not in COVERAGE_METRICS:
            raise ValueError(f"unknown coverage metric {self.coverage_metric!r}")
        seen = set()
        for row in pts:
            key = row.tobytes()
            if key in seen:
                raise ValueError("trajectory set contains duplicate members")
            seen.add(key)
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    def member(self, index: int) -> Trajectory:
        return Trajectory(self.points[index], self.dt, AGENT_FRAME)

    @property
    def trajectories(self) -> list:
        return [self.member(i) for i in range(len(self))]

    def dense_samples(self, sample_step: float = 0.25):
        """Agent-frame samples along every member at <= sample_step spacing.

        Returns (samples (M, 2), member_index (M,)); cached per step since
        the samples are reused for every scene's on-road mask.
        """
        key = float(sample_step)
        if key not in self._dense_cache:
            chunks = [densify(self.points[k], sample_step) for k in range(len(self))]
            samples = np.concatenate(chunks, axis=0)
            owner = np.repeat(np.arange(len(self)), [c.shape[0] for c in chunks])
            self._dense_cache[key] = (samples, owner)
        return self._dense_cache[key]


def build_set(
    candidates,
    epsilon: float,
    metric: str = "max_l2",
    max_candidates: int = DEFAULT_CANDIDATE_CAP,
    subsample_seed: int = 0,
) -> TrajectorySet:
    """Greedy coverage construction over a candidate pool.

    Repeatedly adds the candidate whose epsilon-ball covers the most
    still-uncovered candidates (ties broken by lowest candidate index)
    until every candidate is within epsilon of some member. Members are
    drawn from the pool itself, never synthesized. Pools larger than
    max_candidates are subsampled with a seeded generator first.
    """
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive")
    stack, dt = _stack_candidates(candidates)
    n = stack.shape[0]
    if n > max_candidates:
        rng = np.random.default_rng(subsample_seed)
        keep = np.sort(rng.choice(n, size=max_candidates, replace=False))
        stack = stack[keep]
        n = max_candidates
    covers = cross_distances(stack, stack, metric) <= epsilon
    covered = np.zeros(n, dtype=bool)
    members: list[int] = []
    while not covered.all():
        gains = covers[:, ~covered].sum(axis=1)
        best = int(np.argmax(gains))
        members.append(best)
        covered |= covers[best]
    return TrajectorySet(stack[members], dt, epsilon, metric, source_count=n)


def build_set_of_size(
    candidates,
    size: int,
    metric: str = "max_l2",
    max_candidates: int = DEFAULT_CANDIDATE_CAP,
    subsample_seed: int = 0,
) -> TrajectorySet:
    """Farthest-first selection of exactly `size` members (fewer if the pool
    has fewer distinct candidates). epsilon is set to the achieved coverage
    radius, so the coverage property holds by construction."""
    if size < 1:
        raise ValueError("size must be >= 1")
    stack, dt = _stack_candidates(candidates)
    # drop exact duplicates, keeping first occurrences
    seen: dict = {}
    for i in range(stack.shape[0]):
        seen.setdefault(stack[i].tobytes(), i)
    stack = stack[np.sort(np.fromiter(seen.values(), dtype=int))]
    n = stack.shape[0]
    if n > max_candidates:
        rng = np.random.default_rng(subsample_seed)
        keep = np.sort(rng.choice(n, size=max_candidates, replace=False))
        stack = stack[keep]
        n = stack.shape[0]
    members = [0]
    min_dist = _dists_to_one(stack, stack[0], metric)
    while len(members) < min(size, n):
        nxt = int(np.argmax(min_dist))
        members.append(nxt)
        min_dist = np.minimum(min_dist, _dists_to_one(stack, stack[nxt], metric))
    epsilon = max(float(min_dist.max()), 1e-9)
    return TrajectorySet(stack[members], dt, epsilon, metric, source_count=n)


def _check_query(tset: TrajectorySet, ground_truth: Trajectory):
    if ground_truth.frame != AGENT_FRAME:
        raise ValueError("ground truth must be in the agent frame")
    if ground_truth.n_points != tset.n_points:
        raise ValueError(
            f"ground truth has {ground_truth.n_points} points, set members have {tset.n_points}"
        )
    if not math.isclose(ground_truth.dt, tset.dt, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(f"ground truth dt {ground_truth.dt} != set dt {tset.dt}")


def distances_to(tset: TrajectorySet, ground_truth: Trajectory, metric: str) -> np.ndarray:
    """Per-member distance to the ground truth under `metric`."""
    _check_query(tset, ground_truth)
    return _dists_to_one(tset.points, ground_truth.points, metric)


def closest_match(tset: TrajectorySet, ground_truth: Trajectory) -> int:
    """Index of the member with the smallest mean point-wise Euclidean
    distance to the ground truth; ties go to the lowest index."""
    return int(np.argmin(distances_to(tset, ground_truth, "mean_l2")))


def onroad_mask(
    tset: TrajectorySet, pose: Pose2, area: PolygonSet, sample_step: float = 0.25
) -> np.ndarray:
    """Binary vector: entry k is 1 iff member k, placed at `pose`, stays
    entirely inside the drivable area (sampled densely along segments)."""
    samples, owner = tset.dense_samples(sample_step)
    world = samples @ pose.rotation().T + pose.translation()
    inside = points_in_polygons(world, area)
    mask = np.ones(len(tset), dtype=bool)
    np.logical_and.at(mask, owner, inside)
    return mask.astype(float)


def set_stats(tset: TrajectorySet) -> dict:
    """Descriptive statistics: size, pairwise-distance min/mean under the
    set's coverage metric, per-member average-speed range. Pairwise stats
    are None for singleton sets; speeds are None for single-point members."""
    k = len(tset)
    stats: dict = {"size": k, "min_pairwise": None, "mean_pairwise": None, "speed_min": None, "speed_max": None}
    if k >= 2:
        dists = cross_distances(tset.points, tset.points, tset.coverage_metric)
        off_diag = dists[~np.eye(k, dtype=bool)]
        stats["min_pairwise"] = float(off_diag.min())
        stats["mean_pairwise"] = float(off_diag.mean())
    if tset.n_points >= 2:
        steps = np.diff(tset.points, axis=1)
        path_len = np.hypot(steps[..., 0], steps[..., 1]).sum(axis=1)
        speeds = path_len / ((tset.n_points - 1) * tset.dt)
        stats["speed_min"] = float(speeds.min())
        stats["speed_max"] = float(speeds.max())
    return stats


def save_set(tset: TrajectorySet, path):
    serialize.write_json(
        path,
        {
            "epsilon": tset.epsilon,
            "metric": tset.coverage_metric,
            "dt": tset.dt,
            "n_points": tset.n_points,
            "trajectories": tset.points,
        },
    )


def load_set(path) -> TrajectorySet:
    raw = serialize.read_json(path)
    pts = np.asarray(raw["trajectories"], dtype=float)
    if pts.shape[1] != int(raw["n_points"]):
        raise ValueError(f"set file {path} is inconsistent: n_points does not match trajectories")
    return TrajectorySet(pts, float(raw["dt"]), float(raw["epsilon"]), str(raw["metric"]))
