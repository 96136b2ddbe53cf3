"""Scene context types and birds-eye-view RGB rasterization.

The raster is a 400x400 8-bit RGB image at 0.25 m/pixel, rotated so the
target agent's heading points up with the agent on pixel (320, 200): the
view reaches 80 m ahead, 20 m behind, and 50 m to each side. Draw order is
drivable area, lane lines, other vehicles, pedestrians, target agent, with
each object's history drawn as oriented boxes whose HSV saturation fades
linearly from 1.0 now to 0.2 at the far end of the history window.

Color table: background black, drivable area dark gray (60, 60, 60), lanes
white, vehicles yellow (hue 60), pedestrians cyan (hue 180), target agent
red (hue 0).
"""

from __future__ import annotations

import colorsys
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import GLOBAL_FRAME, PolygonSet, Pose2, Trajectory
from .physics import AgentKinematics

VEHICLE = "vehicle"
PEDESTRIAN = "pedestrian"

DRIVABLE_COLOR = (60, 60, 60)
LANE_COLOR = (255, 255, 255)
VEHICLE_HUE = 60.0 / 360.0
PEDESTRIAN_HUE = 180.0 / 360.0
TARGET_HUE = 0.0

MIN_SATURATION = 0.2
IMPUTED_DIMS = {VEHICLE: (4.5, 2.0), PEDESTRIAN: (0.6, 0.6)}


@dataclass(frozen=True)
class AgentState:
    t: float
    x: float
    y: float
    yaw: float
    speed: float
    accel: float
    yaw_rate: float
    length: float = 0.0
    width: float = 0.0

    def pose(self) -> Pose2:
        return Pose2(self.x, self.y, self.yaw)


@dataclass(frozen=True)
class AgentTrack:
    agent_id: str
    kind: str
    states: tuple

    def __post_init__(self):
        if self.kind not in (VEHICLE, PEDESTRIAN):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if not self.states:
            raise ValueError("agent track needs at least one state")
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def last(self) -> AgentState:
        return self.states[-1]


@dataclass(frozen=True)
class SceneMap:
    drivable: PolygonSet
    lanes: tuple

    def __post_init__(self):
        lanes = tuple(np.asarray(l, dtype=float) for l in self.lanes)
        for lane in lanes:
            if lane.ndim != 2 or lane.shape[1] != 2 or lane.shape[0] < 2:
                raise ValueError("each lane polyline needs shape (M >= 2, 2)")
        object.__setattr__(self, "lanes", lanes)


@dataclass(frozen=True)
class SceneContext:
    """One prediction instance: map, agent histories, and the target agent.

    Histories are uniformly sampled at 1/freq and end at t_now; the target
    track must include a state exactly at t_now. `future` optionally holds
    the target's ground-truth future (global frame, horizon*freq points).
    """

    scene_id: str
    scene_map: SceneMap
    agents: tuple
    target_id: str
    t_now: float
    history_window: float
    prediction_horizon: float
    freq: float
    future: np.ndarray | None = None

    def __post_init__(self):
        if not (self.history_window > 0 and self.prediction_horizon > 0 and self.freq > 0):
            raise ValueError("history_window, prediction_horizon, freq must be positive")
        agents = tuple(self.agents)
        ids = [a.agent_id for a in agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        if self.target_id not in ids:
            raise ValueError(f"target agent {self.target_id!r} missing from scene")
        dt = 1.0 / self.freq
        for track in agents:
            times = np.array([s.t for s in track.states])
            if np.any(times > self.t_now + 1e-9):
                raise ValueError("agent history extends past t_now")
            if len(times) > 1 and np.max(np.abs(np.diff(times) - dt)) > 1e-6:
                raise ValueError("agent history must be uniformly sampled at 1/freq")
        target = agents[ids.index(self.target_id)]
        if abs(target.last.t - self.t_now) > 1e-6:
            raise ValueError("target track must include a state at t_now")
        if self.future is not None:
            fut = np.asarray(self.future, dtype=float)
            n_expected = int(round(self.prediction_horizon * self.freq))
            if fut.shape != (n_expected, 2):
                raise ValueError(f"future must have shape ({n_expected}, 2), got {fut.shape}")
            fut = fut.copy()
            fut.setflags(write=False)
            object.__setattr__(self, "future", fut)
        object.__setattr__(self, "agents", agents)

    def target_track(self) -> AgentTrack:
        for track in self.agents:
            if track.agent_id == self.target_id:
                return track
        raise AssertionError("unreachable: target validated at construction")

    def target_pose(self) -> Pose2:
        return self.target_track().last.pose()

    def target_kinematics(self) -> AgentKinematics:
        s = self.target_track().last
        return AgentKinematics(s.pose(), s.speed, s.accel, s.yaw_rate)

    def future_trajectory(self) -> Trajectory:
        if self.future is None:
            raise ValueError(f"scene {self.scene_id} carries no ground-truth future")
        return Trajectory(self.future, 1.0 / self.freq, GLOBAL_FRAME)


@dataclass(frozen=True)
class RasterConfig:
    height: int = 400
    width: int = 400
    resolution: float = 0.25
    agent_row: int = 320
    agent_col: int = 200


DEFAULT_RASTER = RasterConfig()


@dataclass(frozen=True)
class RasterImage:
    pixels: np.ndarray
    resolution: float
    agent_pixel: tuple

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError("pixels must have shape (H, W, 3)")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "agent_pixel", tuple(int(v) for v in self.agent_pixel))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 3


def history_saturation(age: float, window: float) -> float:
    """Linear fade from 1.0 at age 0 to MIN_SATURATION at the window edge."""
    if window <= 0:
        return 1.0
    frac = min(max(age / window, 0.0), 1.0)
    return 1.0 - (1.0 - MIN_SATURATION) * frac


def _hsv_color(hue: float, saturation: float, value: float = 1.0) -> tuple:
    r, g, b = colorsys.hsv_to_rgb(hue, saturation, value)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def _to_image_coords(points: np.ndarray, pose: Pose2, cfg: RasterConfig) -> np.ndarray:
    """Global (x, y) -> continuous image (row, col) with heading up."""
    local = (np.asarray(points, dtype=float) - pose.translation()) @ pose.rotation()
    u = cfg.agent_row - local[:, 0] / cfg.resolution
    v = cfg.agent_col - local[:, 1] / cfg.resolution
    return np.stack([u, v], axis=1)


def _fill_rings(rings_uv, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill of one polygon (outer ring plus holes) against
    integer pixel sample points; returns a boolean (height, width) mask."""
    mask = np.zeros((height, width), dtype=bool)
    u1 = np.concatenate([r[:, 0] for r in rings_uv])
    v1 = np.concatenate([r[:, 1] for r in rings_uv])
    u2 = np.concatenate([np.roll(r[:, 0], -1) for r in rings_uv])
    v2 = np.concatenate([np.roll(r[:, 1], -1) for r in rings_uv])
    lo = max(0, int(math.ceil(min(u1.min(), u2.min()))))
    hi = min(height - 1, int(math.floor(max(u1.max(), u2.max()))))
    cols = np.arange(width, dtype=float)
    for r in range(lo, hi + 1):
        straddle = (u1 > r) != (u2 > r)
        if not straddle.any():
            continue
        a_u, a_v = u1[straddle], v1[straddle]
        b_u, b_v = u2[straddle], v2[straddle]
        crossings = np.sort(a_v + (r - a_u) * (b_v - a_v) / (b_u - a_u))
        mask[r] = np.searchsorted(crossings, cols, side="right") % 2 == 1
    return mask


def _paint_polyline(img: np.ndarray, pts_uv: np.ndarray, color) -> None:
    height, width = img.shape[:2]
    step = 0.5  # pixels between samples along each segment
    samples = [pts_uv[:1]]
    for a, b in zip(pts_uv[:-1], pts_uv[1:]):
        n = max(1, int(math.ceil(math.hypot(*(b - a)) / step)))
        ts = np.arange(1, n + 1)[:, None] / n
        samples.append(a + ts * (b - a))
    uv = np.concatenate(samples, axis=0)
    rows = np.rint(uv[:, 0]).astype(int)
    cols = np.rint(uv[:, 1]).astype(int)
    ok = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    img[rows[ok], cols[ok]] = color


def _box_ring(state: AgentState, kind: str) -> np.ndarray:
    length, width = state.length, state.width
    imputed_l, imputed_w = IMPUTED_DIMS[kind]
    if not (length > 0):
        length = imputed_l
    if not (width > 0):
        width = imputed_w
    half_l, half_w = length / 2.0, width / 2.0
    corners = np.array([[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]])
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + np.array([state.x, state.y])


def _paint_track(img, track: AgentTrack, hue: float, ctx: SceneContext, pose: Pose2, cfg: RasterConfig) -> None:
    for state in track.states:  # ascending time, so newer boxes overdraw older
        sat = history_saturation(ctx.t_now - state.t, ctx.history_window)
        color = _hsv_color(hue, sat)
        ring_uv = _to_image_coords(_box_ring(state, track.kind), pose, cfg)
        img[_fill_rings([ring_uv], cfg.height, cfg.width)] = color


def render(ctx: SceneContext, mode: str = "full", cfg: RasterConfig = DEFAULT_RASTER) -> RasterImage:
    """Rasterize a scene; mode "map_only" leaves out every agent."""
    if mode not in ("full", "map_only"):
        raise ValueError(f"unknown render mode {mode!r}")
    pose = ctx.target_pose()
    img = np.zeros((cfg.height, cfg.width, 3), dtype=np.uint8)

    area = ctx.scene_map.drivable
    for outer, holes in zip(area.polygons, area.holes):
        rings_uv = [_to_image_coords(ring, pose, cfg) for ring in (outer, *holes)]
        img[_fill_rings(rings_uv, cfg.height, cfg.width)] = DRIVABLE_COLOR
    for lane in ctx.scene_map.lanes:
        _paint_polyline(img, _to_image_coords(lane, pose, cfg), LANE_COLOR)

    if mode == "full":
        others = [a for a in ctx.agents if a.agent_id != ctx.target_id]
        for track in (t for t in others if t.kind == VEHICLE):
            _paint_track(img, track, VEHICLE_HUE, ctx, pose, cfg)
        for track in (t for t in others if t.kind == PEDESTRIAN):
            _paint_track(img, track, PEDESTRIAN_HUE, ctx, pose, cfg)
        _paint_track(img, ctx.target_track(), TARGET_HUE, ctx, pose, cfg)

    return RasterImage(img, cfg.resolution, (cfg.agent_row, cfg.agent_col))


def downsample_features(img: RasterImage, grid: tuple) -> np.ndarray:
    """Per-cell, per-channel pixel means on a (rows, cols) grid, scaled to
    [0, 1] and flattened row-major (cell-major, channel-minor)."""
    rows, cols = grid
    if rows < 1 or cols < 1 or img.height % rows or img.width % cols:
        raise ValueError(f"grid {grid} must divide image dims {(img.height, img.width)}")
    cells = img.pixels.reshape(rows, img.height // rows, cols, img.width // cols, 3)
    return (cells.mean(axis=(1, 3)) / 255.0).reshape(-1)


def write_ppm(img: RasterImage, path) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.pixels.tobytes())


def write_png(img: RasterImage, path) -> None:
    """Minimal PNG writer (8-bit RGB, no filtering); byte-deterministic."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))

    raw = b"".join(b"\x00" + img.pixels[r].tobytes() for r in range(img.height))
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 2, 0, 0, 0)
    payload = (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )
    with open(path, "wb") as fh:
        fh.write(payload)
