"""Condensation filter over camera poses and the per-frame registration loop.

Each frame is registered on its own first (homography from semantic
keypoints, refinement with associated players, focal length, smoothed
intrinsics, decomposition). The particle filter then fuses that frame with
the past: particles are resampled, jittered by a Gaussian random walk and
weighted by their reprojection errors; their weighted mean is refined by
Levenberg-Marquardt under a Gaussian prior fitted to the jittered cloud,
and the cloud is shifted rigidly onto the refined pose. When the
single-frame pose explains more detections than the filtered one the
particle set is rebuilt around it.
"""

from __future__ import annotations

import logging
import time
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .association import (
    Detection,
    associate_players,
    match_semantic,
    refine_homography_with_players,
    split_detections,
)
from .errors import InputError, NumericalError
from .field_model import FieldTemplate
from .geometry.calibration import decompose_homography, focal_from_homography, homography_from_pose, project
from .geometry.homography import RansacConfig, estimate_homography_ransac
from .geometry.refine import PosePrior, refine_pose
from .geometry.types import Correspondences, Homography, Intrinsics, Pose

log = logging.getLogger(__name__)

MIN_MEASUREMENT_SIGMA_PX = 1e-9

REGISTERED = "registered"
COASTING = "coasting"
UNREGISTERED = "unregistered"


class FilterWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 300
    sigma_semantic: float = 2.0
    sigma_player: float = 2.0
    alpha: float = 0.5
    rotation_std_deg: tuple[float, float, float] = (0.5, 0.5, 0.5)
    translation_std_m: tuple[float, float, float] = (0.05, 0.05, 0.05)
    window: int | None = 30  # None keeps every past focal estimate
    reinit_radius_px: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise InputError("n_particles must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError("alpha must lie in [0, 1]")
        if self.sigma_semantic <= 0 or self.sigma_player <= 0:
            raise InputError("sigma_semantic and sigma_player must be positive")
        if min(self.rotation_std_deg) < 0 or min(self.translation_std_m) < 0:
            raise InputError("perturbation standard deviations must be non-negative")
        if self.window is not None and self.window < 1:
            raise InputError("window must be >= 1 or None")

    @property
    def covariance(self) -> np.ndarray:
        """Diagonal random-walk covariance over (axis-angle [rad], translation [m])."""
        std = np.concatenate([np.deg2rad(self.rotation_std_deg), self.translation_std_m])
        return np.diag(std**2)


@dataclass(frozen=True)
class PipelineConfig:
    ransac: RansacConfig = RansacConfig()
    filter: FilterConfig = FilterConfig()
    use_filter: bool = True
    use_players: bool = True
    player_gate_m: float = 2.0
    refine_direct: bool = True
    recenter: bool = True


@dataclass
class FilterState:
    """Particle set plus the focal-length history. Owned by one sequence."""

    config: FilterConfig
    quats: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))  # (x, y, z, w)
    trans: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rng: np.random.Generator | None = None
    history: deque = None
    intrinsics: Intrinsics | None = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)
        if self.history is None:
            self.history = deque(maxlen=self.config.window)

    @property
    def initialized(self) -> bool:
        return len(self.weights) > 0

    @property
    def n(self) -> int:
        return len(self.weights)

    def particle_pose(self, i: int) -> Pose:
        return Pose.from_quaternion(self.quats[i], self.trans[i])


def _normalize_quats(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def initialize_particles(state: FilterState, pose: Pose, rng: np.random.Generator | None = None) -> FilterState:
    """Populate N particles at ``pose`` jittered by the random-walk covariance, uniform weights."""
    n = state.config.n_particles
    state.quats = np.tile(pose.quaternion, (n, 1))
    state.trans = np.tile(pose.t, (n, 1))
    state.weights = np.full(n, 1.0 / n)
    return perturb(state, rng)


def resample(state: FilterState, rng: np.random.Generator | None = None) -> FilterState:
    """Systematic resampling; weights reset to 1/N."""
    rng = state.rng if rng is None else rng
    w = np.asarray(state.weights, dtype=float)
    n = len(w)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        warnings.warn("all particle weights are zero; resampling uniformly", FilterWarning, stacklevel=2)
        w = np.full(n, 1.0 / n)
    else:
        w = w / total
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(cdf, positions, side="right")
    idx = np.minimum(idx, n - 1)
    state.quats = state.quats[idx]
    state.trans = state.trans[idx]
    state.weights = np.full(n, 1.0 / n)
    return state


def perturb(state: FilterState, rng: np.random.Generator | None = None) -> FilterState:
    """Random-walk step: right-multiplied axis-angle noise and additive translation noise."""
    rng = state.rng if rng is None else rng
    cfg = state.config
    n = state.n
    rot_std = np.deg2rad(np.asarray(cfg.rotation_std_deg, dtype=float))
    trans_std = np.asarray(cfg.translation_std_m, dtype=float)
    noise = rng.standard_normal((n, 6))
    if np.any(rot_std > 0):
        dq = Rotation.from_rotvec(noise[:, :3] * rot_std)
        state.quats = (Rotation.from_quat(state.quats) * dq).as_quat()
    state.quats = _normalize_quats(state.quats)
    state.trans = state.trans + noise[:, 3:] * trans_std
    return state


def particle_weight(xi_s, xi_p, sigma_s: float = 2.0, sigma_p: float = 2.0, alpha: float = 0.5):
    """Unnormalized particle weight from mean semantic and player errors (pixels).

    Each term is a Gaussian kernel exp(-xi^2 / (2 sigma^2)), mixed with
    ``alpha`` on the semantic side.
    """
    xi_s = np.asarray(xi_s, dtype=float)
    xi_p = np.asarray(xi_p, dtype=float)
    return alpha * np.exp(-(xi_s**2) / (2 * sigma_s**2)) + (1 - alpha) * np.exp(-(xi_p**2) / (2 * sigma_p**2))


def log_particle_weight(xi_s, xi_p, sigma_s, sigma_p, alpha):
    with np.errstate(divide="ignore"):
        a = np.log(alpha) - np.asarray(xi_s) ** 2 / (2 * sigma_s**2)
        b = np.log1p(-alpha) - np.asarray(xi_p) ** 2 / (2 * sigma_p**2)
    return np.logaddexp(a, b)


def _project_particles(state: FilterState, K: Intrinsics, world: np.ndarray) -> np.ndarray:
    """(N, m, 2) projections; points behind a particle's camera become NaN."""
    Rs = Rotation.from_quat(state.quats).as_matrix()
    X = np.hstack([world, np.zeros((len(world), 1))])
    pc = np.einsum("nij,mj->nmi", Rs, X) + state.trans[:, None, :]
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = K.f * pc[..., :2] / z[..., None] + np.array(K.principal_point)
    uv[z <= 0] = np.nan
    return uv


def particle_errors(state, K, semantic_corrs, player_dets, player_world):
    """Per-particle mean semantic error and mean player error (pixels, NaN when absent)."""
    n = state.n
    xi_s = np.full(n, np.nan)
    xi_p = np.full(n, np.nan)
    if len(semantic_corrs):
        uv = _project_particles(state, K, semantic_corrs.world)
        d = np.linalg.norm(uv - semantic_corrs.image[None], axis=2)
        xi_s = np.where(np.isnan(d).any(axis=1), np.inf, np.nanmean(np.nan_to_num(d, nan=0.0), axis=1))
    dets = np.asarray(player_dets, dtype=float).reshape(-1, 2)
    pw = np.asarray(player_world, dtype=float).reshape(-1, 2)
    if len(dets) and len(pw):
        uv = _project_particles(state, K, pw)
        d = np.linalg.norm(uv[:, :, None, :] - dets[None, None], axis=3).min(axis=2)
        xi_p = np.where(np.isnan(d).any(axis=1), np.inf, np.nan_to_num(d, nan=0.0).mean(axis=1))
    return xi_s, xi_p


def compute_weights(
    state: FilterState, K: Intrinsics, semantic_corrs: Correspondences, player_dets=(), player_world=()
) -> FilterState:
    """Weight particles by their reprojection errors and normalize.

    Without player data the player term is dropped (alpha acts as 1);
    without semantic data the semantic term is dropped.
    """
    cfg = state.config
    xi_s, xi_p = particle_errors(state, K, semantic_corrs, player_dets, player_world)
    has_s = not np.all(np.isnan(xi_s))
    has_p = not np.all(np.isnan(xi_p))
    if not has_s and not has_p:
        warnings.warn("no correspondences to weight particles; using uniform weights", FilterWarning, stacklevel=2)
        state.weights = np.full(state.n, 1.0 / state.n)
        return state
    alpha = cfg.alpha if (has_s and has_p) else (1.0 if has_s else 0.0)
    logw = log_particle_weight(
        np.nan_to_num(xi_s, nan=np.inf), np.nan_to_num(xi_p, nan=np.inf), cfg.sigma_semantic, cfg.sigma_player, alpha
    )
    top = np.max(logw)
    if not np.isfinite(top):
        warnings.warn("every particle has zero weight; using uniform weights", FilterWarning, stacklevel=2)
        state.weights = np.full(state.n, 1.0 / state.n)
        return state
    w = np.exp(logw - top)
    state.weights = w / w.sum()
    return state


def estimate_pose(state: FilterState, weights: np.ndarray | None = None) -> Pose:
    """Weighted mean pose: mean translation and renormalized, sign-aligned mean quaternion."""
    w = state.weights if weights is None else weights
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    best = int(np.argmax(w))
    q = state.quats
    signs = np.where(q @ q[best] < 0, -1.0, 1.0)
    q_mean = (w * signs) @ q
    norm = np.linalg.norm(q_mean)
    if norm < 1e-6:
        warnings.warn("particle rotations cancel out; using the highest-weight particle", FilterWarning, stacklevel=2)
        return state.particle_pose(best)
    return Pose.from_quaternion(q_mean / norm, w @ state.trans)


def cloud_prior(state: FilterState) -> PosePrior:
    """Gaussian fitted to the current (equally weighted) particle cloud."""
    mean = estimate_pose(state, np.full(state.n, 1.0 / state.n))
    dphi = (Rotation.from_quat(state.quats) * Rotation.from_matrix(mean.R).inv()).as_rotvec()
    delta = np.hstack([dphi, state.trans - mean.t])
    cov = delta.T @ delta / max(state.n, 1)
    return PosePrior.from_covariance(mean, cov)


def recenter(state: FilterState, pose: Pose) -> FilterState:
    """Shift the particle cloud rigidly so its weighted mean coincides with ``pose``."""
    mean = estimate_pose(state)
    delta = Rotation.from_matrix(pose.R @ mean.R.T)
    state.quats = _normalize_quats((delta * Rotation.from_quat(state.quats)).as_quat())
    state.trans = state.trans + (pose.t - mean.t)
    return state


def _robust_focal(values: np.ndarray) -> float:
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    keep = np.abs(values - med) <= 3.0 * mad
    return float(np.median(values[keep]))


def smooth_intrinsics(state: FilterState, K_new: Intrinsics | None) -> Intrinsics:
    """Moving median of recent focal estimates after 3-MAD outlier rejection."""
    if K_new is not None and np.isfinite(K_new.f) and K_new.f > 0:
        state.history.append(float(K_new.f))
        size = (K_new.width, K_new.height)
    elif state.intrinsics is not None:
        size = (state.intrinsics.width, state.intrinsics.height)
    else:
        size = None
    if not state.history or size is None:
        raise NumericalError("no intrinsics available")
    f = _robust_focal(np.fromiter(state.history, dtype=float))
    state.intrinsics = Intrinsics(f, *size)
    return state.intrinsics


def inlier_count(
    K: Intrinsics, pose: Pose, semantic_corrs: Correspondences, player_dets=(), player_world=(), radius_px: float = 5.0
) -> int:
    """Detections explained by ``pose`` within ``radius_px``.

    A semantic detection counts when its keypoint reprojects within the
    radius; a player detection counts when some known player position does.
    """
    count = 0
    if len(semantic_corrs):
        X = np.hstack([semantic_corrs.world, np.zeros((len(semantic_corrs), 1))])
        pc = X @ pose.R.T + pose.t
        ok = pc[:, 2] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = K.f * pc[:, :2] / pc[:, 2:3] + np.array(K.principal_point)
        d = np.linalg.norm(uv - semantic_corrs.image, axis=1)
        count += int(np.sum(ok & (d <= radius_px)))
    dets = np.asarray(player_dets, dtype=float).reshape(-1, 2)
    pw = np.asarray(player_world, dtype=float).reshape(-1, 2)
    if len(dets) and len(pw):
        X = np.hstack([pw, np.zeros((len(pw), 1))])
        pc = X @ pose.R.T + pose.t
        front = pc[:, 2] > 0
        if np.any(front):
            uv = K.f * pc[front, :2] / pc[front, 2:3] + np.array(K.principal_point)
            d = np.linalg.norm(dets[:, None] - uv[None], axis=2).min(axis=1)
            count += int(np.sum(d <= radius_px))
    return count


def maybe_reinitialize(
    state: FilterState,
    M_direct: Pose | None,
    M_filtered: Pose,
    K: Intrinsics,
    semantic_corrs: Correspondences,
    player_dets=(),
    player_world=(),
) -> bool:
    """Rebuild the particle set around ``M_direct`` if it has strictly more inliers."""
    if M_direct is None:
        return False
    tau = state.config.reinit_radius_px
    n_direct = inlier_count(K, M_direct, semantic_corrs, player_dets, player_world, tau)
    n_filtered = inlier_count(K, M_filtered, semantic_corrs, player_dets, player_world, tau)
    if n_direct > n_filtered:
        log.info("re-initializing filter: %d direct inliers vs %d filtered", n_direct, n_filtered)
        initialize_particles(state, M_direct)
        return True
    return False


@dataclass(frozen=True, eq=False)
class FrameEstimate:
    status: str
    intrinsics: Intrinsics | None
    pose: Pose | None
    direct_pose: Pose | None
    inliers: int
    inliers_direct: int
    reinitialized: bool
    n_detections: int
    elapsed_s: float
    homography: Homography | None = None


def _visible_players(K: Intrinsics, pose: Pose, player_world: np.ndarray, margin: float = 0.0) -> np.ndarray:
    if len(player_world) == 0:
        return player_world
    X = np.hstack([player_world, np.zeros((len(player_world), 1))])
    pc = X @ pose.R.T + pose.t
    front = pc[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = K.f * pc[:, :2] / pc[:, 2:3] + np.array(K.principal_point)
    inside = (
        front
        & (uv[:, 0] >= -margin)
        & (uv[:, 0] <= K.width + margin)
        & (uv[:, 1] >= -margin)
        & (uv[:, 1] <= K.height + margin)
    )
    return player_world[inside]


def step(
    state: FilterState,
    detections: Sequence[Detection],
    player_world,
    template: FieldTemplate,
    cfg: PipelineConfig,
    image_size: tuple[float, float],
) -> FrameEstimate:
    """Register one frame and advance the filter."""
    t_start = time.perf_counter()
    width, height = image_size
    semantic_dets, player_px = split_detections(detections)
    if not cfg.use_players:
        player_px = np.zeros((0, 2))
    pw = np.zeros((0, 2)) if player_world is None or not cfg.use_players else np.asarray(player_world, float).reshape(-1, 2)
    sem = match_semantic(semantic_dets, template)
    template_pts = template.world_points()

    # single-frame estimate
    H_meas: Homography | None = None
    frame_corrs = Correspondences.empty()
    sem_inliers = Correspondences.empty()
    if len(sem) >= 4:
        try:
            H_meas, mask = estimate_homography_ransac(sem, cfg.ransac)
            sem_inliers = frame_corrs = sem.subset(mask)
        except NumericalError as exc:
            log.debug("semantic homography failed: %s", exc)

    H_assoc = H_meas
    if H_assoc is None and state.initialized and state.intrinsics is not None and cfg.use_filter:
        # fall back on the filter's prediction to associate players
        H_assoc = homography_from_pose(state.intrinsics, estimate_pose(state))
    if H_assoc is not None and len(player_px) and len(pw):
        pc = associate_players(H_assoc, player_px, pw, cfg.player_gate_m)
        if len(pc) and len(sem) + len(pc) >= 4:
            try:
                H1, mask1 = refine_homography_with_players(sem, pc, cfg.ransac)
                H_meas = H1
                combined = sem + pc
                frame_corrs = combined.subset(mask1)
                sem_inliers = frame_corrs.subset(frame_corrs.is_semantic)
            except NumericalError as exc:
                log.debug("player refinement failed: %s", exc)

    K_new = None
    if H_meas is not None:
        try:
            K_new = Intrinsics(focal_from_homography(H_meas, width, height), width, height)
        except NumericalError as exc:
            log.debug("focal estimation failed: %s", exc)
    try:
        K_m = smooth_intrinsics(state, K_new)
    except NumericalError:
        K_m = None

    M_d = None
    direct_cost = None
    if H_meas is not None and K_m is not None and len(frame_corrs) >= 4:
        try:
            M_d = decompose_homography(H_meas, K_m, template_pts)
            if cfg.refine_direct:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = refine_pose(M_d, K_m, frame_corrs)
                M_d, direct_cost = fit.pose, fit.cost
        except NumericalError as exc:
            log.debug("decomposition failed: %s", exc)
            M_d = None

    ref_pose = M_d
    player_world_vis = pw
    if K_m is not None and (ref_pose is not None or state.initialized):
        if ref_pose is None and cfg.use_filter:
            ref_pose = estimate_pose(state)
        if ref_pose is not None:
            player_world_vis = _visible_players(K_m, ref_pose, pw)

    def count(pose):
        if pose is None or K_m is None:
            return 0
        return inlier_count(K_m, pose, sem, player_px, player_world_vis, state.config.reinit_radius_px)

    n_dets = len(detections)

    def done(status, pose, reinit, n_f):
        return FrameEstimate(
            status=status,
            intrinsics=K_m if pose is not None else None,
            pose=pose,
            direct_pose=M_d,
            inliers=n_f,
            inliers_direct=count(M_d),
            reinitialized=reinit,
            n_detections=n_dets,
            elapsed_s=time.perf_counter() - t_start,
            homography=H_meas,
        )

    if not cfg.use_filter:
        if M_d is None:
            return done(UNREGISTERED, None, False, 0)
        return done(REGISTERED, M_d, False, count(M_d))

    if not state.initialized:
        if M_d is None:
            return done(UNREGISTERED, None, False, 0)
        initialize_particles(state, M_d)
        return done(REGISTERED, M_d, True, count(M_d))

    resample(state)
    perturb(state)
    if K_m is None:
        return done(UNREGISTERED, None, False, 0)
    if M_d is None or len(frame_corrs) < 4:
        coast = estimate_pose(state)
        return done(COASTING, coast, False, count(coast))

    prior = cloud_prior(state)
    compute_weights(state, K_m, sem_inliers, player_px, player_world_vis)
    M_hat = estimate_pose(state)
    # measurement noise from the single-frame fit; exact data then overrides the prior
    if direct_cost is None:
        direct_cost = float(np.sum((project(K_m, M_d, frame_corrs.world, check_depth=False) - frame_corrs.image) ** 2))
    dof = max(2 * len(frame_corrs) - 6, 1)
    sigma_meas = max(np.sqrt(direct_cost / dof), MIN_MEASUREMENT_SIGMA_PX)
    prior = PosePrior(prior.mean, prior.sqrt_information * sigma_meas)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        M_hat = refine_pose(M_hat, K_m, frame_corrs, prior=prior).pose
    if maybe_reinitialize(state, M_d, M_hat, K_m, sem, player_px, player_world_vis):
        return done(REGISTERED, M_d, True, count(M_d))
    if cfg.recenter:
        recenter(state, M_hat)
    return done(REGISTERED, M_hat, False, count(M_hat))


class SequenceRegistrar:
    """Runs ``step`` over a sequence with one filter state."""

    def __init__(self, template: FieldTemplate, image_size, cfg: PipelineConfig = PipelineConfig()):
        self.template = template
        self.image_size = (float(image_size[0]), float(image_size[1]))
        self.cfg = cfg
        self.state = FilterState(cfg.filter)

    def step(self, detections: Sequence[Detection], player_world=None) -> FrameEstimate:
        return step(self.state, detections, player_world, self.template, self.cfg, self.image_size)

    def run(self, frames: Iterable[tuple[Sequence[Detection], np.ndarray | None]]) -> list[FrameEstimate]:
        return [self.step(dets, pw) for dets, pw in frames]

