"""Single-plane calibration: focal length and pose from a field homography.

Focal length
------------
Write H = lambda * K [r1 r2 t] with K = [[f, 0, w/2], [0, f, h/2], [0, 0, 1]].
Translating the principal point to the origin (G = T H, with
T = [[1, 0, -w/2], [0, 1, -h/2], [0, 0, 1]]) leaves
G = lambda * diag(f, f, 1) [r1 r2 t]. With a = G[:, 0], b = G[:, 1] the two
orthonormality constraints on the first two rotation columns give

    r1 . r2 = 0        ->  f^2 = -(a0 b0 + a1 b1) / (a2 b2)
    |r1| = |r2|        ->  f^2 = (b0^2 + b1^2 - a0^2 - a1^2) / ((a2 + b2)(a2 - b2))

a2 and b2 are the first two entries of the third row of H (T does not
change that row). The candidate with the larger denominator is used. Pixel
coordinates are divided by max(w, h) before the computation so the
denominators are compared on a resolution-independent scale.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import DecompositionError, FocalUnobservableError, InconsistentHomographyError, ZeroDepthError
from .types import Homography, Intrinsics, Pose

log = logging.getLogger(__name__)

DENOMINATOR_EPS = 1e-12


def focal_candidates(H: Homography, width: float, height: float) -> tuple[float, float, float, float, float]:
    """Return (f1_sq, f2_sq, d1, d2, scale) in units of ``scale`` pixels."""
    s = float(max(width, height))
    T = np.array([[1 / s, 0.0, -width / (2 * s)], [0.0, 1 / s, -height / (2 * s)], [0.0, 0.0, 1.0]])
    G = T @ H.matrix
    G = G / np.linalg.norm(G[:, :2])
    a, b = G[:, 0], G[:, 1]
    d1 = a[2] * b[2]
    d2 = (a[2] + b[2]) * (a[2] - b[2])
    with np.errstate(divide="ignore", invalid="ignore"):
        f1_sq = -(a[0] * b[0] + a[1] * b[1]) / d1
        f2_sq = (b[0] ** 2 + b[1] ** 2 - a[0] ** 2 - a[1] ** 2) / d2
    return f1_sq, f2_sq, d1, d2, s


def focal_from_homography(H: Homography, width: float, height: float) -> float:
    f1_sq, f2_sq, d1, d2, s = focal_candidates(H, width, height)
    if max(abs(d1), abs(d2)) < DENOMINATOR_EPS:
        raise FocalUnobservableError("focal unobservable: homography is close to fronto-parallel")
    use_f1 = abs(d1) > abs(d2)
    f_sq = f1_sq if use_f1 else f2_sq
    log.debug("focal candidates: f1^2=%g f2^2=%g (x %g px^2), using %s", f1_sq, f2_sq, s * s, "f1" if use_f1 else "f2")
    if not np.isfinite(f_sq) or f_sq <= 0:
        raise InconsistentHomographyError(f"inconsistent homography: f^2 = {f_sq * s * s:g}")
    return float(s * np.sqrt(f_sq))


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (SVD projection with det correction)."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    return U @ D @ Vt


def decompose_homography(H: Homography, K: Intrinsics, points=None) -> Pose:
    """Recover [R | t] from H given the intrinsics.

    The sign of the scale factor is chosen so that most of ``points``
    (field-plane coordinates, default: the world origin) lie in front of
    the camera.
    """
    A = K.K_inv @ H.matrix
    lam = 0.5 * (np.linalg.norm(A[:, 0]) + np.linalg.norm(A[:, 1]))
    if lam == 0:
        raise DecompositionError("homography columns vanish")
    B = A / lam

    pts = np.zeros((1, 2)) if points is None else np.asarray(points, dtype=float).reshape(-1, 2)
    depth = pts @ B[2, :2] + B[2, 2]
    n_front, n_back = int(np.sum(depth > 0)), int(np.sum(depth < 0))
    if n_front == n_back:
        raise DecompositionError("field points are not in front of the camera under either sign")
    if n_back > n_front:
        B = -B

    b1, b2 = B[:, 0], B[:, 1]
    R = nearest_rotation(np.column_stack([b1, b2, np.cross(b1, b2)]))
    if np.linalg.det(R) <= 0:
        raise DecompositionError("could not project onto a proper rotation")
    return Pose(R, B[:, 2])


def homography_from_pose(K: Intrinsics, pose: Pose) -> Homography:
    return Homography(K.K @ np.column_stack([pose.R[:, 0], pose.R[:, 1], pose.t]))


def _as_world3(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    pts = pts.reshape(-1, pts.shape[-1]) if pts.ndim > 1 else pts.reshape(1, -1)
    if pts.shape[1] == 2:
        pts = np.hstack([pts, np.zeros((len(pts), 1))])
    return pts


def project(K: Intrinsics, pose: Pose, points, return_depth: bool = False, check_depth: bool = True):
    """Pinhole projection of world points (n, 2) or (n, 3) to pixels (n, 2)."""
    X = _as_world3(points)
    cam = X @ pose.R.T + pose.t
    depth = cam[:, 2]
    if check_depth and np.any(np.abs(depth) < 1e-12):
        raise ZeroDepthError("point lies on the camera plane")
    cx, cy = K.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.column_stack([K.f * cam[:, 0] / depth + cx, K.f * cam[:, 1] / depth + cy])
    if return_depth:
        return uv, depth
    return uv


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of a camera at ``center`` looking at ``target``; image y points away from ``up``."""
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise DecompositionError("viewing direction is parallel to the up vector")
    x = x / nx
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return Pose(R, -R @ center)
