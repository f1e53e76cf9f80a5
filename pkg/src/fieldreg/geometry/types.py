from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import DegenerateConfigurationError, InputError

PLAYER = 0  # correspondence source tag for anonymous player points
ROTATION_TOL = 1e-9
MAX_CONDITION = 1e12


def _to_homogeneous(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hstack([points, np.ones((len(points), 1))])


@dataclass(frozen=True, eq=False)
class Homography:
    """Plane-to-image homography, normalized to unit Frobenius norm with H[2, 2] >= 0."""

    matrix: np.ndarray

    def __post_init__(self):
        H = np.array(self.matrix, dtype=float)
        if H.shape != (3, 3) or not np.all(np.isfinite(H)):
            raise DegenerateConfigurationError("homography must be a finite 3x3 matrix")
        norm = np.linalg.norm(H)
        if norm == 0:
            raise DegenerateConfigurationError("zero homography")
        H = H / norm
        if H[2, 2] < 0:
            H = -H
        if np.linalg.cond(H) > MAX_CONDITION:
            raise DegenerateConfigurationError("homography is numerically rank deficient")
        H.setflags(write=False)
        object.__setattr__(self, "matrix", H)

    def apply(self, points) -> np.ndarray:
        """Map (n, 2) points; returns (n, 2)."""
        q = _to_homogeneous(points) @ self.matrix.T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: Homography) -> Homography:
        return Homography(self.matrix @ other.matrix)

    def __repr__(self):
        return f"Homography({np.array2string(self.matrix, precision=6)})"


@dataclass(frozen=True)
class Intrinsics:
    """Zero-skew pinhole camera with square pixels and the principal point at the image center."""

    f: float
    width: float
    height: float

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise InputError(f"focal length must be positive, got {self.f}")
        if not (self.width > 0 and self.height > 0):
            raise InputError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.width / 2.0, self.height / 2.0

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.f, 0.0, cx], [0.0, self.f, cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[1 / self.f, 0.0, -cx / self.f], [0.0, 1 / self.f, -cy / self.f], [0.0, 0.0, 1.0]])

    def with_focal(self, f: float) -> Intrinsics:
        return Intrinsics(float(f), self.width, self.height)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera transform x_cam = R @ X + t (camera looks along +z, y points down)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("pose must be finite")
        if np.linalg.norm(R.T @ R - np.eye(3)) > ROTATION_TOL or abs(np.linalg.det(R) - 1) > ROTATION_TOL:
            raise InputError("R is not a proper rotation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_rotvec(cls, rotvec, t) -> Pose:
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), t)

    @classmethod
    def from_quaternion(cls, quat, t) -> Pose:
        """``quat`` in scalar-last (x, y, z, w) order."""
        return cls(Rotation.from_quat(quat).as_matrix(), t)

    @property
    def quaternion(self) -> np.ndarray:
        return Rotation.from_matrix(self.R).as_quat()

    @property
    def camera_center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def depths(self, world_xy) -> np.ndarray:
        """Camera-frame depth of field-plane points."""
        w = np.asarray(world_xy, dtype=float).reshape(-1, 2)
        return w @ self.R[2, :2] + self.t[2]

    def __repr__(self):
        rv = Rotation.from_matrix(self.R).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired field-plane points (meters) and image points (pixels).

    ``ids`` carries the semantic keypoint id of each pair, or ``PLAYER`` (0)
    for anonymous player points.
    """

    world: np.ndarray
    image: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        world = np.asarray(self.world, dtype=float).reshape(-1, 2)
        image = np.asarray(self.image, dtype=float).reshape(-1, 2)
        ids = np.asarray(self.ids, dtype=int).reshape(-1)
        if not (len(world) == len(image) == len(ids)):
            raise InputError("correspondence arrays differ in length")
        if not (np.all(np.isfinite(world)) and np.all(np.isfinite(image))):
            raise InputError("correspondences must be finite")
        object.__setattr__(self, "world", world)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def empty(cls) -> Correspondences:
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int))

    @classmethod
    def from_arrays(cls, world, image, ids=None) -> Correspondences:
        world = np.asarray(world, dtype=float).reshape(-1, 2)
        if ids is None:
            ids = np.arange(1, len(world) + 1)
        return cls(world, image, ids)

    def __len__(self):
        return len(self.ids)

    @property
    def is_semantic(self) -> np.ndarray:
        return self.ids > 0

    @property
    def n_semantic(self) -> int:
        return int(np.count_nonzero(self.ids > 0))

    def subset(self, mask) -> Correspondences:
        return Correspondences(self.world[mask], self.image[mask], self.ids[mask])

    def __add__(self, other: Correspondences) -> Correspondences:
        return Correspondences(
            np.vstack([self.world, other.world]),
            np.vstack([self.image, other.image]),
            np.concatenate([self.ids, other.ids]),
        )
