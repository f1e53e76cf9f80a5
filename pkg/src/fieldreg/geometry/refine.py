"""Levenberg-Marquardt pose refinement on reprojection residuals.

The rotation is updated by a left-multiplied axis-angle increment,
R <- exp([w]x) R, and the translation additively. An optional Gaussian
prior on the pose turns the problem into a MAP estimate; the temporal
filter uses it to combine its prediction with the frame's measurements.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .types import Correspondences, Intrinsics, Pose

log = logging.getLogger(__name__)


class RefinementWarning(RuntimeWarning):
    pass


def _skew(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices for (n, 3) vectors."""
    z = np.zeros(len(v))
    return np.stack(
        [
            np.stack([z, -v[:, 2], v[:, 1]], axis=1),
            np.stack([v[:, 2], z, -v[:, 0]], axis=1),
            np.stack([-v[:, 1], v[:, 0], z], axis=1),
        ],
        axis=1,
    )


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi)
    S = _skew(phi[None])[0]
    if theta < 1e-6:
        return np.eye(3) - 0.5 * S + S @ S / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * S + coef * S @ S


@dataclass(frozen=True, eq=False)
class PosePrior:
    """Gaussian prior N(mean, covariance) over the 6-vector (rotation log, translation)."""

    mean: Pose
    sqrt_information: np.ndarray  # 6x6, residual = L @ [log(R mean.R^T); t - mean.t]

    @classmethod
    def from_covariance(cls, mean: Pose, cov: np.ndarray, floor: float = 1e-12) -> PosePrior:
        cov = 0.5 * (cov + cov.T) + floor * np.eye(6)
        info = np.linalg.inv(cov)
        L = np.linalg.cholesky(0.5 * (info + info.T)).T
        return cls(mean, L)


def reprojection_residuals(pose: Pose, K: Intrinsics, world: np.ndarray, image: np.ndarray) -> np.ndarray:
    X = np.hstack([world, np.zeros((len(world), 1))])
    pc = X @ pose.R.T + pose.t
    u = K.f * pc[:, 0] / pc[:, 2] + K.width / 2.0
    v = K.f * pc[:, 1] / pc[:, 2] + K.height / 2.0
    return np.column_stack([u - image[:, 0], v - image[:, 1]]).ravel()


def reprojection_jacobian(pose: Pose, K: Intrinsics, world: np.ndarray) -> np.ndarray:
    """d(residuals)/d(w, dt), shape (2n, 6)."""
    X = np.hstack([world, np.zeros((len(world), 1))])
    y = X @ pose.R.T
    pc = y + pose.t
    x, yy, z = pc[:, 0], pc[:, 1], pc[:, 2]
    n = len(world)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = K.f / z
    dproj[:, 0, 2] = -K.f * x / z**2
    dproj[:, 1, 1] = K.f / z
    dproj[:, 1, 2] = -K.f * yy / z**2
    d_rot = dproj @ (-_skew(y))
    return np.concatenate([d_rot, dproj], axis=2).reshape(2 * n, 6)


def prior_residuals(pose: Pose, prior: PosePrior) -> np.ndarray:
    dphi = Rotation.from_matrix(pose.R @ prior.mean.R.T).as_rotvec()
    return prior.sqrt_information @ np.concatenate([dphi, pose.t - prior.mean.t])


def prior_jacobian(pose: Pose, prior: PosePrior) -> np.ndarray:
    dphi = Rotation.from_matrix(pose.R @ prior.mean.R.T).as_rotvec()
    J = np.zeros((6, 6))
    J[:3, :3] = so3_left_jacobian_inv(dphi)
    J[3:, 3:] = np.eye(3)
    return prior.sqrt_information @ J


def apply_increment(pose: Pose, delta: np.ndarray) -> Pose:
    R = Rotation.from_rotvec(delta[:3]).as_matrix() @ pose.R
    # re-orthonormalize against drift over many increments
    U, _, Vt = np.linalg.svd(R)
    return Pose(U @ Vt, pose.t + delta[3:])


@dataclass(frozen=True, eq=False)
class RefineResult:
    pose: Pose
    cost: float
    initial_cost: float
    iterations: int
    diverged: bool = False


def _cost_terms(pose, K, world, image, prior):
    r = reprojection_residuals(pose, K, world, image)
    if prior is not None:
        r = np.concatenate([r, prior_residuals(pose, prior)])
    return r


def _gauss_newton_decrease(A: np.ndarray, g: np.ndarray) -> float:
    """Cost decrease predicted by a full Gauss-Newton step."""
    try:
        return float(g @ np.linalg.lstsq(A, g, rcond=None)[0])
    except np.linalg.LinAlgError:
        return np.inf


def refine_pose(
    pose: Pose,
    K: Intrinsics,
    corrs: Correspondences,
    prior: PosePrior | None = None,
    max_iters: int = 50,
    rtol: float = 1e-12,
) -> RefineResult:
    """Minimize the reprojection sum of squares over the pose.

    Steps are accepted only when they lower the cost, so the returned cost
    never exceeds the input cost. If no damping value yields a decrease
    from a non-stationary start, the input pose is returned with
    ``diverged=True``.
    """
    world, image = corrs.world, corrs.image
    if len(world) < 3 and prior is None:
        raise ValueError(f"pose refinement needs at least 3 correspondences, got {len(world)}")

    r = _cost_terms(pose, K, world, image, prior)
    cost0 = cost = float(r @ r)
    if not np.isfinite(cost0):
        warnings.warn("pose refinement started from a non-finite cost", RefinementWarning, stacklevel=2)
        return RefineResult(pose, cost0, cost0, 0, diverged=True)
    current = pose
    lam = 1e-4
    accepted = 0
    stuck = False
    it = 0
    for it in range(1, max_iters + 1):
        J = reprojection_jacobian(current, K, world)
        if prior is not None:
            J = np.vstack([J, prior_jacobian(current, prior)])
        g = J.T @ r
        A = J.T @ J
        if _gauss_newton_decrease(A, g) <= rtol * cost + 1e-30:
            break
        diag = np.diag(A).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        improved = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = apply_increment(current, delta)
            r_new = _cost_terms(candidate, K, world, image, prior)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            stuck = True
            break
        accepted += 1
        current, r, cost = candidate, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)

    if stuck and accepted == 0:
        warnings.warn("pose refinement could not decrease the cost; returning the input pose", RefinementWarning, stacklevel=2)
        return RefineResult(pose, cost0, cost0, it, diverged=True)
    log.debug("refine_pose: cost %.6g -> %.6g in %d iterations", cost0, cost, it)
    return RefineResult(current, cost, cost0, it)
