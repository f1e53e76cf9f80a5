"""Synthetic ground truth and detections for planar field registration.

Generates camera trajectories (static, orbit, or spline through waypoints)
with a piecewise-linear zoom schedule, players doing bounded random walks
on the field, and keypoint detections corrupted by configurable noise,
dropout, gross outliers, identity swaps and player false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .association import PLAYER_KIND, SEMANTIC, Detection
from .errors import InputError
from .field_model import FieldTemplate
from .geometry.calibration import look_at, project
from .geometry.types import Intrinsics, Pose


@dataclass(frozen=True)
class NoiseModel:
    semantic_px: float = 1.0
    player_px: float = 3.0
    dropout: float = 0.0
    outlier_prob: float = 0.0
    outlier_px: tuple[float, float] = (50.0, 200.0)  # offset magnitude range
    swap_prob: float = 0.0
    player_dropout: float = 0.0
    player_false_positive_rate: float = 0.0  # expected false player detections per frame

    def __post_init__(self):
        for name in ("dropout", "outlier_prob", "swap_prob", "player_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {p}")
        if self.semantic_px < 0 or self.player_px < 0 or self.player_false_positive_rate < 0:
            raise InputError("noise levels must be non-negative")
        lo, hi = self.outlier_px
        if not 0 <= lo <= hi:
            raise InputError("outlier_px must be an increasing pair of non-negative values")

    @classmethod
    def exact(cls) -> NoiseModel:
        return cls(semantic_px=0.0, player_px=0.0)


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str = "orbit"  # static | orbit | waypoints
    n_frames: int = 100
    fps: float = 25.0
    width: int = 1920
    height: int = 1080
    target: tuple[float, float, float] | None = None  # look-at point, default field center
    radius: float = 30.0
    camera_height: float = 12.0
    start_angle_deg: float = -90.0
    angular_speed_deg: float = 2.0  # degrees per second
    waypoints: tuple = ()  # ((cx, cy, cz, tx, ty, tz), ...) spread evenly over the sequence
    focal_schedule: tuple = ((0, 1500.0),)  # ((frame, focal_px), ...) piecewise linear
    min_visible: int = 4
    min_visible_fraction: float = 0.9

    def __post_init__(self):
        if self.kind not in ("static", "orbit", "waypoints"):
            raise InputError(f"unknown trajectory kind {self.kind!r}")
        if self.n_frames < 1 or self.fps <= 0 or self.width <= 0 or self.height <= 0:
            raise InputError("n_frames, fps and image size must be positive")
        if self.kind == "waypoints" and len(self.waypoints) < 2:
            raise InputError("waypoint trajectories need at least 2 waypoints")
        if not self.focal_schedule or any(f <= 0 for _, f in self.focal_schedule):
            raise InputError("focal schedule must contain positive focal lengths")


@dataclass(frozen=True)
class PlayerConfig:
    n_players: int = 10
    max_speed: float = 8.0  # m/s
    accel_std: float = 4.0  # m/s^2


@dataclass(frozen=True, eq=False)
class TruthFrame:
    index: int
    timestamp: float
    intrinsics: Intrinsics
    pose: Pose
    players: np.ndarray


@dataclass(frozen=True, eq=False)
class GroundTruthSequence:
    frames: list[TruthFrame]
    width: int
    height: int
    fps: float
    template_name: str = ""

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


def focal_at(schedule, frame: int) -> float:
    knots = sorted(schedule)
    xs = np.array([k for k, _ in knots], dtype=float)
    fs = np.array([f for _, f in knots], dtype=float)
    return float(np.interp(frame, xs, fs))


def _camera_path(template: FieldTemplate, cfg: TrajectoryConfig) -> list[Pose]:
    cx, cy = template.center
    target = np.array(cfg.target if cfg.target is not None else (cx, cy, 0.0), dtype=float)
    n = cfg.n_frames
    if cfg.kind in ("static", "orbit"):
        speed = 0.0 if cfg.kind == "static" else cfg.angular_speed_deg
        angles = np.deg2rad(cfg.start_angle_deg + speed * np.arange(n) / cfg.fps)
        centers = np.column_stack(
            [
                target[0] + cfg.radius * np.cos(angles),
                target[1] + cfg.radius * np.sin(angles),
                np.full(n, cfg.camera_height),
            ]
        )
        return [look_at(c, target) for c in centers]
    wp = np.asarray(cfg.waypoints, dtype=float)
    knots = np.linspace(0, n - 1, len(wp))
    frames = np.arange(n)
    centers = CubicSpline(knots, wp[:, :3], bc_type="clamped")(frames)
    targets = CubicSpline(knots, wp[:, 3:6], bc_type="clamped")(frames)
    return [look_at(c, t) for c, t in zip(centers, targets)]


def _simulate_players(template: FieldTemplate, n_frames: int, fps: float, cfg: PlayerConfig, rng) -> list[np.ndarray]:
    xmin, ymin, xmax, ymax = template.extent()
    dt = 1.0 / fps
    pos = np.column_stack([rng.uniform(xmin, xmax, cfg.n_players), rng.uniform(ymin, ymax, cfg.n_players)])
    vel = rng.normal(0.0, cfg.max_speed / 3, (cfg.n_players, 2))
    out = []
    for _ in range(n_frames):
        out.append(pos.copy())
        vel = vel + rng.normal(0.0, cfg.accel_std * dt, vel.shape)
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        vel = np.where(speed > cfg.max_speed, vel * cfg.max_speed / np.maximum(speed, 1e-12), vel)
        pos = pos + vel * dt
        # reflect off the field edges
        for axis, lo, hi in ((0, xmin, xmax), (1, ymin, ymax)):
            below, above = pos[:, axis] < lo, pos[:, axis] > hi
            pos[below, axis] = 2 * lo - pos[below, axis]
            pos[above, axis] = 2 * hi - pos[above, axis]
            vel[below | above, axis] *= -1
        pos = np.clip(pos, [xmin, ymin], [xmax, ymax])
    return out


def visible_mask(K: Intrinsics, pose: Pose, world) -> tuple[np.ndarray, np.ndarray]:
    """Projection and visibility (in front of the camera and inside the image)."""
    world = np.asarray(world, dtype=float).reshape(-1, 2)
    if len(world) == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    uv, depth = project(K, pose, world, return_depth=True, check_depth=False)
    inside = (depth > 0) & (uv[:, 0] >= 0) & (uv[:, 0] <= K.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height)
    return uv, inside


def generate_sequence(
    template: FieldTemplate,
    traj: TrajectoryConfig,
    players: PlayerConfig = PlayerConfig(),
    seed: int = 0,
) -> GroundTruthSequence:
    rng = np.random.default_rng([seed, 0x5EED])
    poses = _camera_path(template, traj)
    player_tracks = _simulate_players(template, traj.n_frames, traj.fps, players, rng)
    frames = []
    n_ok = 0
    kp = template.world_points()
    for i, (pose, pl) in enumerate(zip(poses, player_tracks)):
        K = Intrinsics(focal_at(traj.focal_schedule, i), traj.width, traj.height)
        _, vis = visible_mask(K, pose, kp)
        n_ok += int(vis.sum() >= traj.min_visible)
        frames.append(TruthFrame(i, i / traj.fps, K, pose, pl))
    if n_ok < traj.min_visible_fraction * traj.n_frames:
        raise InputError(
            f"trajectory keeps {traj.min_visible} keypoints in view in only {n_ok}/{traj.n_frames} frames"
        )
    return GroundTruthSequence(frames, traj.width, traj.height, traj.fps, template.name)


def render_detections(
    K: Intrinsics,
    pose: Pose,
    template: FieldTemplate,
    players,
    noise: NoiseModel = NoiseModel(),
    seed=0,
) -> list[Detection]:
    """Noisy detections of the visible keypoints and players for one frame."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = template.ids
    uv, vis = visible_mask(K, pose, template.world_points(ids))
    dets: list[Detection] = []
    for pos, (kid, p, ok) in enumerate(zip(ids, uv, vis)):
        # same draws for every keypoint so later draws don't shift with visibility
        r_drop, r_swap, r_out = rng.random(3)
        noise_xy = rng.standard_normal(2) * noise.semantic_px
        out_mag = rng.uniform(*noise.outlier_px)
        out_dir = rng.uniform(0, 2 * np.pi)
        other = int(rng.integers(len(ids) - 1))
        other += other >= pos
        if not ok or r_drop < noise.dropout:
            continue
        q = p + noise_xy
        if r_out < noise.outlier_prob:
            q = q + out_mag * np.array([np.cos(out_dir), np.sin(out_dir)])
        new_id = int(kid)
        if r_swap < noise.swap_prob:
            new_id = int(ids[other])
        dets.append(Detection(float(q[0]), float(q[1]), SEMANTIC, new_id, 1.0))

    puv, pvis = visible_mask(K, pose, players)
    for p, ok in zip(puv, pvis):
        r_drop = rng.random()
        noise_xy = rng.standard_normal(2) * noise.player_px
        if not ok or r_drop < noise.player_dropout:
            continue
        q = p + noise_xy
        dets.append(Detection(float(q[0]), float(q[1]), PLAYER_KIND, None, 1.0))
    n_fp = rng.poisson(noise.player_false_positive_rate) if noise.player_false_positive_rate > 0 else 0
    for _ in range(n_fp):
        dets.append(Detection(float(rng.uniform(0, K.width)), float(rng.uniform(0, K.height)), PLAYER_KIND, None, 0.5))
    return dets


def frame_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def simulate(
    template: FieldTemplate,
    traj: TrajectoryConfig,
    noise: NoiseModel = NoiseModel(),
    players: PlayerConfig = PlayerConfig(),
    seed: int = 0,
) -> tuple[GroundTruthSequence, list[list[Detection]]]:
    truth = generate_sequence(template, traj, players, seed)
    dets = [
        render_detections(fr.intrinsics, fr.pose, template, fr.players, noise, frame_seed(seed, fr.index))
        for fr in truth.frames
    ]
    return truth, dets


@dataclass(frozen=True)
class SimulationConfig:
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    players: PlayerConfig = field(default_factory=PlayerConfig)
    template: str = "basketball"
    seed: int = 0
