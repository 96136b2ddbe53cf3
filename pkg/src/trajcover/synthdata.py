"""Procedural driving scenes: maps plus kinematically consistent agents.

Each scene builds a drivable corridor around a target vehicle whose motion
follows one of the four kinematic baseline families, so ground-truth
futures are on-road by construction and the physics oracle stays a
meaningful difficulty reference. Generation is deterministic per
(seed, scene index); regenerating a corpus reproduces files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .geometry import PolygonSet, Pose2, Trajectory, transform_to_frame
from .physics import MODELS, AgentKinematics, rollout_states
from .raster import PEDESTRIAN, VEHICLE, AgentState, AgentTrack, SceneContext, SceneMap

ROAD_KINDS = ("straight", "arc", "t_intersection")

_FAMILIES_BY_ROAD = {
    "straight": ("cv_cy", "ca_cy"),
    "arc": ("cv_cyr", "ca_cyr"),
    "t_intersection": ("cv_cy", "ca_cy"),
}

_CLIP_MARGIN = 0.3  # meters kept between noisy ground truth and corridor edge


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    n_scenes: int = 100
    road_kinds: tuple = ROAD_KINDS
    lane_width: float = 3.5
    speed_range: tuple = (3.0, 12.0)
    history_window: float = 2.0
    prediction_horizon: float = 3.0
    freq: float = 2.0
    lateral_noise: float = 0.2
    corridor_margin: float = 1.0
    two_lane_prob: float = 0.5
    max_distractors: int = 4
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be >= 1")
        if not self.road_kinds or any(k not in ROAD_KINDS for k in self.road_kinds):
            raise ValueError(f"road_kinds must be a nonempty subset of {ROAD_KINDS}")
        if self.lane_width <= self.vehicle_width:
            raise ValueError("infeasible spec: lane narrower than the vehicle")
        if self.speed_range[0] <= 0 or self.speed_range[1] < self.speed_range[0]:
            raise ValueError("speed_range must be positive and ordered")
        if not (self.history_window > 0 and self.prediction_horizon > 0 and self.freq > 0):
            raise ValueError("windows and freq must be positive")
        for name in ("lateral_noise", "corridor_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        n_fut = self.prediction_horizon * self.freq
        if abs(n_fut - round(n_fut)) > 1e-9 or round(n_fut) < 1:
            raise ValueError("prediction_horizon * freq must be a positive integer")


def _draw_accel(rng, v0: float, total_time: float) -> float:
    """Acceleration with |a| in [0.1, 1.2]; decelerations are capped so the
    speed stays above 0.5 m/s for the whole span (the baselines clamp speed
    at zero, which would blur the model families together)."""
    mag = rng.uniform(0.1, 1.2)
    if rng.random() < 0.5:
        cap = max(0.0, (v0 - 0.5) / total_time)
        if cap >= 0.1:
            return -min(mag, cap)
    return mag


def _dense_centerline(kin: AgentKinematics, family: str, total_time: float, freq: float) -> np.ndarray:
    """Fine-grained (x, y, yaw) samples of the clean target path, extended
    straight past both ends so corridor and boxes have slack."""
    fine = rollout_states(kin, family, total_time, freq * 20)
    pts = np.concatenate([[[kin.pose.x, kin.pose.y, kin.pose.yaw]], fine[:, :3]], axis=0)
    lead = 8.0
    d0 = np.array([math.cos(pts[0, 2]), math.sin(pts[0, 2])])
    d1 = np.array([math.cos(pts[-1, 2]), math.sin(pts[-1, 2])])
    back = [np.concatenate([pts[0, :2] - d0 * s, [pts[0, 2]]]) for s in np.linspace(lead, 1.0, 8)]
    ahead = [np.concatenate([pts[-1, :2] + d1 * s, [pts[-1, 2]]]) for s in np.linspace(1.0, lead, 8)]
    return np.concatenate([back, pts, ahead], axis=0)


def _decimate(points: np.ndarray, spacing: float) -> np.ndarray:
    """Keep points roughly `spacing` apart along the polyline (always keeps
    the endpoints)."""
    keep = [0]
    acc = 0.0
    for i in range(1, points.shape[0]):
        acc += float(np.hypot(*(points[i, :2] - points[i - 1, :2])))
        if acc >= spacing:
            keep.append(i)
            acc = 0.0
    if keep[-1] != points.shape[0] - 1:
        keep.append(points.shape[0] - 1)
    return points[keep]


def _offset_polyline(center: np.ndarray, offset: float) -> np.ndarray:
    normals = np.stack([-np.sin(center[:, 2]), np.cos(center[:, 2])], axis=1)
    return center[:, :2] + normals * offset


def _corridor_ring(center: np.ndarray, half_left: float, half_right: float) -> np.ndarray:
    left = _offset_polyline(center, half_left)
    right = _offset_polyline(center, -half_right)
    return np.concatenate([left, right[::-1]], axis=0)


def _stem_ring(anchor_xy, tangent, normal, side: float, half_width: float, length: float) -> np.ndarray:
    base = np.asarray(anchor_xy)
    out = normal * side
    return np.stack(
        [
            base - tangent * half_width,
            base + tangent * half_width,
            base + tangent * half_width + out * length,
            base - tangent * half_width + out * length,
        ]
    )


def _linear_track(agent_id, kind, rng, spec, p_now, heading, speed, dims):
    """Constant-velocity distractor; states cover the history window and end at t_now."""
    n_hist = int(round(spec.history_window * spec.freq))
    dt = 1.0 / spec.freq
    vel = speed * np.array([math.cos(heading), math.sin(heading)])
    states = []
    for j in range(n_hist + 1):
        t = j * dt
        pos = p_now - vel * (spec.history_window - t)
        states.append(
            AgentState(t, float(pos[0]), float(pos[1]), heading, speed, 0.0, 0.0, dims[0], dims[1])
        )
    return AgentTrack(agent_id, kind, tuple(states))


def _generate_scene(spec: ScenarioSpec, index: int) -> SceneContext:
    rng = np.random.default_rng([spec.seed, index])
    road_kind = spec.road_kinds[int(rng.integers(len(spec.road_kinds)))]
    family = _FAMILIES_BY_ROAD[road_kind][int(rng.integers(2))]

    n_hist = int(round(spec.history_window * spec.freq))
    n_fut = int(round(spec.prediction_horizon * spec.freq))
    dt = 1.0 / spec.freq
    total_time = spec.history_window + spec.prediction_horizon

    origin = rng.uniform(-100.0, 100.0, size=2)
    heading = float(rng.uniform(-math.pi, math.pi))
    v0 = float(rng.uniform(*spec.speed_range))
    accel = _draw_accel(rng, v0, total_time) if family.startswith("ca") else 0.0
    if family.endswith("cyr"):
        radius = rng.uniform(max(10.0, 2.0 * v0), 60.0)
        yaw_rate = float(rng.choice([-1.0, 1.0]) * v0 / radius)
    else:
        yaw_rate = 0.0
    kin_start = AgentKinematics(Pose2(origin[0], origin[1], heading), v0, accel, yaw_rate)

    # target motion: one Euler stream covering history then future
    full = rollout_states(kin_start, family, total_time, spec.freq)
    states = [
        AgentState(0.0, kin_start.pose.x, kin_start.pose.y, kin_start.pose.yaw, v0, accel, yaw_rate,
                   spec.vehicle_length, spec.vehicle_width)
    ]
    for j in range(n_hist):
        x, y, yaw, v = full[j]
        states.append(
            AgentState((j + 1) * dt, float(x), float(y), float(yaw), float(v), accel, yaw_rate,
                       spec.vehicle_length, spec.vehicle_width)
        )
    target = AgentTrack("target", VEHICLE, tuple(states))

    two_lanes = rng.random() < spec.two_lane_prob
    other_side = float(rng.choice([-1.0, 1.0]))
    half_target = spec.lane_width / 2.0 + spec.corridor_margin
    half_other = half_target + (spec.lane_width if two_lanes else 0.0)
    half_left = half_other if other_side > 0 else half_target
    half_right = half_other if other_side < 0 else half_target

    center = _dense_centerline(kin_start, family, total_time, spec.freq)
    rings = [_corridor_ring(_decimate(center, 1.0), half_left, half_right)]
    lanes = [_decimate(center, 2.0)[:, :2]]
    if two_lanes:
        lanes.append(_offset_polyline(_decimate(center, 2.0), other_side * spec.lane_width))

    if road_kind == "t_intersection":
        frac = rng.uniform(0.35, 0.65)
        j = int(frac * center.shape[0])
        yaw_j = center[j, 2]
        tangent = np.array([math.cos(yaw_j), math.sin(yaw_j)])
        normal = np.array([-math.sin(yaw_j), math.cos(yaw_j)])
        side = float(rng.choice([-1.0, 1.0]))
        stem_len = float(rng.uniform(12.0, 25.0))
        stem_half = spec.lane_width + spec.corridor_margin
        rings.append(_stem_ring(center[j, :2], tangent, normal, side, stem_half, stem_len))
        lanes.append(np.stack([center[j, :2], center[j, :2] + normal * side * stem_len]))

    # ground-truth future: clean rollout continuation plus clipped lateral noise
    fut_states = full[n_hist:]
    normals = np.stack([-np.sin(fut_states[:, 2]), np.cos(fut_states[:, 2])], axis=1)
    clip_at = max(0.0, half_target - _CLIP_MARGIN)
    eta = np.clip(rng.uniform(-1.0, 1.0, size=n_fut) * spec.lateral_noise, -clip_at, clip_at)
    future = fut_states[:, :2] + normals * eta[:, None]

    agents = [target]
    n_distract = int(rng.integers(0, spec.max_distractors + 1))
    for d in range(n_distract):
        agent_id = f"agent-{d:02d}"
        if rng.random() < 0.7:
            j = int(rng.uniform(0.1, 0.9) * center.shape[0])
            yaw_j = float(center[j, 2])
            lane_off = other_side * spec.lane_width if two_lanes and rng.random() < 0.5 else 0.0
            along = float(rng.uniform(8.0, 30.0) * rng.choice([-1.0, 1.0]))
            tangent = np.array([math.cos(yaw_j), math.sin(yaw_j)])
            normal = np.array([-math.sin(yaw_j), math.cos(yaw_j)])
            pos = center[j, :2] + tangent * along + normal * lane_off
            head = yaw_j if lane_off == 0.0 or rng.random() < 0.5 else yaw_j + math.pi
            agents.append(
                _linear_track(agent_id, VEHICLE, rng, spec, pos, head,
                              float(rng.uniform(2.0, 10.0)), (spec.vehicle_length, spec.vehicle_width))
            )
        else:
            j = int(rng.uniform(0.1, 0.9) * center.shape[0])
            yaw_j = float(center[j, 2])
            normal = np.array([-math.sin(yaw_j), math.cos(yaw_j)])
            side = float(rng.choice([-1.0, 1.0]))
            pos = center[j, :2] + normal * side * (max(half_left, half_right) + rng.uniform(0.5, 2.0))
            agents.append(
                _linear_track(agent_id, PEDESTRIAN, rng, spec, pos,
                              float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(0.5, 1.5)),
                              (0.6, 0.6))
            )

    scene_map = SceneMap(PolygonSet(rings), tuple(lanes))
    return SceneContext(
        scene_id=f"scene-{index:06d}",
        scene_map=scene_map,
        agents=tuple(agents),
        target_id="target",
        t_now=spec.history_window,
        history_window=spec.history_window,
        prediction_horizon=spec.prediction_horizon,
        freq=spec.freq,
        future=future,
    )


def generate(spec: ScenarioSpec) -> list:
    """Generate `spec.n_scenes` scenes; scene i depends only on (seed, i)."""
    return [_generate_scene(spec, i) for i in range(spec.n_scenes)]


def generator_family(ctx: SceneContext) -> str:
    """Recover which baseline family produced the target (from its stored
    kinematics); useful for oracle-accuracy checks on noise-free corpora."""
    s = ctx.target_track().last
    accel_on = s.accel != 0.0
    yaw_on = s.yaw_rate != 0.0
    return MODELS[(2 if accel_on else 0) + (1 if yaw_on else 0)]


def future_in_agent_frame(ctx: SceneContext) -> Trajectory:
    return transform_to_frame(ctx.future_trajectory(), ctx.target_pose(), "to_agent")


def split(scenes, fractions, seed: int = 0) -> dict:
    """Seeded disjoint split; each named part gets floor(fraction * n) scenes."""
    total = sum(fractions.values())
    if total > 1.0 + 1e-9:
        raise ValueError(f"fractions sum to {total}, must be <= 1")
    if any(f < 0 for f in fractions.values()):
        raise ValueError("fractions must be nonnegative")
    order = np.random.default_rng(seed).permutation(len(scenes))
    out: dict = {}
    start = 0
    for name, frac in fractions.items():
        count = int(math.floor(frac * len(scenes) + 1e-9))
        out[name] = [scenes[i] for i in order[start : start + count]]
        start += count
    return out


def scene_to_dict(ctx: SceneContext) -> dict:
    area = ctx.scene_map.drivable
    if any(len(h) for h in area.holes):
        raise ValueError("scene JSON does not support polygon holes")
    return {
        "scene_id": ctx.scene_id,
        "freq_hz": ctx.freq,
        "map": {
            "drivable": [p for p in area.polygons],
            "lanes": [l for l in ctx.scene_map.lanes],
        },
        "agents": [
            {
                "id": track.agent_id,
                "type": track.kind,
                "states": [
                    {
                        "t": s.t, "x": s.x, "y": s.y, "yaw": s.yaw,
                        "speed": s.speed, "accel": s.accel, "yaw_rate": s.yaw_rate,
                        "length": s.length, "width": s.width,
                    }
                    for s in track.states
                ],
            }
            for track in ctx.agents
        ],
        "target_id": ctx.target_id,
        "t_now": ctx.t_now,
        "history_s": ctx.history_window,
        "horizon_s": ctx.prediction_horizon,
        "future": ctx.future if ctx.future is not None else None,
    }


def scene_from_dict(raw: dict) -> SceneContext:
    agents = tuple(
        AgentTrack(
            a["id"],
            a["type"],
            tuple(
                AgentState(
                    float(s["t"]), float(s["x"]), float(s["y"]), float(s["yaw"]),
                    float(s["speed"]), float(s["accel"]), float(s["yaw_rate"]),
                    float(s.get("length", 0.0)), float(s.get("width", 0.0)),
                )
                for s in a["states"]
            ),
        )
        for a in raw["agents"]
    )
    future = raw.get("future")
    return SceneContext(
        scene_id=str(raw["scene_id"]),
        scene_map=SceneMap(PolygonSet(raw["map"]["drivable"]), tuple(np.asarray(l, dtype=float) for l in raw["map"]["lanes"])),
        agents=agents,
        target_id=str(raw["target_id"]),
        t_now=float(raw["t_now"]),
        history_window=float(raw["history_s"]),
        prediction_horizon=float(raw["horizon_s"]),
        freq=float(raw["freq_hz"]),
        future=None if future is None else np.asarray(future, dtype=float),
    )


def write_scene(ctx: SceneContext, path) -> None:
    serialize.write_json(path, scene_to_dict(ctx))


def read_scene(path) -> SceneContext:
    return scene_from_dict(serialize.read_json(path))


def save_scenes(scenes, out_dir) -> list:
    """Write one JSON per scene into out_dir; returns the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ctx in scenes:
        path = out_dir / f"{ctx.scene_id}.json"
        write_scene(ctx, path)
        paths.append(path)
    return paths


def load_scenes(scene_dir) -> list:
    scene_dir = Path(scene_dir)
    files = sorted(scene_dir.glob("scene-*.json"))
    if not files:
        raise FileNotFoundError(f"no scene-*.json files under {scene_dir}")
    return [read_scene(p) for p in files]
