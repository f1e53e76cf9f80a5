"""Homography estimation: normalized DLT and a seeded RANSAC wrapper."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateConfigurationError, InsufficientCorrespondencesError, RansacFailure
from .types import Correspondences, Homography

log = logging.getLogger(__name__)

_TRIPLES = tuple(itertools.combinations(range(4), 3))


def hartley_normalization(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    c = points.mean(axis=0)
    d = np.mean(np.linalg.norm(points - c, axis=1))
    if d <= 0:
        raise DegenerateConfigurationError("coincident points")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _collinear(points: np.ndarray, rel_tol: float = 1e-9) -> bool:
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] == 0 or sv[1] <= rel_tol * sv[0]


def _dlt_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = len(src)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    rows_u = np.stack([-x, -y, -ones, zeros, zeros, zeros, u * x, u * y, u], axis=1)
    rows_v = np.stack([zeros, zeros, zeros, -x, -y, -ones, v * x, v * y, v], axis=1)
    return np.vstack([rows_u, rows_v])


def dlt(world, image) -> Homography:
    world = np.asarray(world, dtype=float).reshape(-1, 2)
    image = np.asarray(image, dtype=float).reshape(-1, 2)
    if len(world) < 4:
        raise InsufficientCorrespondencesError(f"insufficient correspondences: need 4, got {len(world)}")
    if _collinear(world) or _collinear(image):
        raise DegenerateConfigurationError("degenerate configuration: points are collinear or coincident")
    Tw = hartley_normalization(world)
    Ti = hartley_normalization(image)
    wn = world @ Tw[:2, :2].T + Tw[:2, 2]
    im = image @ Ti[:2, :2].T + Ti[:2, 2]
    _, s, vt = np.linalg.svd(_dlt_matrix(wn, im))
    if s[7] <= 1e-12 * s[0]:
        raise DegenerateConfigurationError("DLT system is numerically rank deficient")
    Hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.solve(Ti, Hn @ Tw))


def estimate_homography_dlt(corrs: Correspondences) -> Homography:
    """Least-squares algebraic fit after Hartley normalization of both point sets."""
    return dlt(corrs.world, corrs.image)


def transfer_errors(H: Homography, world: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Symmetric transfer error in pixels.

    The backward (image -> field) residual is measured in meters and scaled
    to pixels with the local area magnification of H at the field point, so
    both directions share the pixel threshold. Returns the RMS of the two.
    """
    M = H.matrix
    q = world @ M[:, :2].T + M[:, 2]
    w = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = q[:, :2] / w[:, None]
        forward = np.linalg.norm(proj - image, axis=1)

        Minv = np.linalg.inv(M)
        p = image @ Minv[:, :2].T + Minv[:, 2]
        back = p[:, :2] / p[:, 2:3]
        backward_m = np.linalg.norm(back - world, axis=1)

        # d(proj)/d(world) = (M[:2,:2] - proj * M[2,:2]) / w
        a = (M[0, 0] - proj[:, 0] * M[2, 0]) / w
        b = (M[0, 1] - proj[:, 0] * M[2, 1]) / w
        c = (M[1, 0] - proj[:, 1] * M[2, 0]) / w
        d = (M[1, 1] - proj[:, 1] * M[2, 1]) / w
        scale = np.sqrt(np.abs(a * d - b * c))
        err = np.sqrt(0.5 * (forward**2 + (scale * backward_m) ** 2))
    return np.where(np.isfinite(err), err, np.inf)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 3.0
    max_iters: int = 2000
    confidence: float = 0.995
    seed: int = 0


def _degenerate_sample(pts: np.ndarray) -> bool:
    scale = np.ptp(pts, axis=0).max()
    if scale == 0:
        return True
    for i, j, k in _TRIPLES:
        a, b, c = pts[i], pts[j], pts[k]
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area <= 1e-6 * scale * scale:
            return True
    return False


def _required_iterations(inlier_ratio: float, confidence: float, max_iters: int) -> int:
    p_good = inlier_ratio**4
    if p_good >= 1.0:
        return 1
    if p_good <= 0.0:
        return max_iters
    return int(min(max_iters, np.ceil(np.log(1.0 - confidence) / np.log(1.0 - p_good))))


def estimate_homography_ransac(
    corrs: Correspondences, cfg: RansacConfig = RansacConfig(), min_semantic: int = 0
) -> tuple[Homography, np.ndarray]:
    """Robust homography fit; returns the model and a boolean inlier mask.

    ``min_semantic`` forces that many semantic correspondences into every
    minimal sample (or all of them when fewer exist), so anonymous player
    points never form a hypothesis alone.
    """
    n = len(corrs)
    if n < 4:
        raise InsufficientCorrespondencesError(f"insufficient correspondences: need 4, got {n}")
    rng = np.random.default_rng(cfg.seed)
    world, image = corrs.world, corrs.image
    sem_idx = np.flatnonzero(corrs.ids > 0)
    k_sem = min(min_semantic, len(sem_idx))

    best_mask = None
    best_count, best_score = -1, np.inf
    needed = cfg.max_iters
    it = 0
    while it < min(needed, cfg.max_iters):
        it += 1
        if k_sem:
            first = rng.choice(sem_idx, size=k_sem, replace=False)
            rest = np.setdiff1d(np.arange(n), first)
            sample = np.concatenate([first, rng.choice(rest, size=4 - k_sem, replace=False)])
        else:
            sample = rng.choice(n, size=4, replace=False)
        if _degenerate_sample(world[sample]) or _degenerate_sample(image[sample]):
            continue
        try:
            H = dlt(world[sample], image[sample])
        except (DegenerateConfigurationError, np.linalg.LinAlgError):
            continue
        err = transfer_errors(H, world, image)
        mask = err < cfg.threshold_px
        count = int(mask.sum())
        score = float(np.minimum(err, cfg.threshold_px).sum())
        if count > best_count or (count == best_count and score < best_score):
            best_count, best_score, best_mask = count, score, mask
            needed = _required_iterations(count / n, cfg.confidence, cfg.max_iters)

    if best_mask is None or best_count < 4:
        raise RansacFailure(f"no model with at least 4 inliers found in {it} iterations")

    mask = best_mask
    H = None
    for _ in range(10):
        try:
            H_new = dlt(world[mask], image[mask])
        except DegenerateConfigurationError:
            break
        H = H_new
        new_mask = transfer_errors(H, world, image) < cfg.threshold_px
        if new_mask.sum() < 4 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if H is None:
        raise RansacFailure("inlier set is degenerate")
    mask = transfer_errors(H, world, image) < cfg.threshold_px
    log.debug("ransac: %d/%d inliers after %d iterations", int(mask.sum()), n, it)
    return H, mask
