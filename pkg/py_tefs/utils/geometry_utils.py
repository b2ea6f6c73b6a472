"""
Rigid-body geometry helpers for the Py-TeFS toolkit.

Poses are camera-to-world (or body-to-world) SE(3) transforms. The helpers here
are shared by the engine, the renderer, the dataset reader and the evaluation
code, so they stay free of any simulation state.
"""

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from py_tefs.utils.errors import DegenerateConfigurationError

ORTHONORMAL_TOLERANCE = 1e-9

# Camera axes (x right, y down, z forward) expressed in the vehicle frame
# (x forward, y left, z up).
VEHICLE_FROM_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, tolerance: float = ORTHONORMAL_TOLERANCE) -> "PoseSE3":
        """Build a pose from a 3x4 or 4x4 matrix, checking the rotation block.

        Args:
            matrix: Homogeneous or row-truncated transform
            tolerance: Allowed deviation from orthonormality and unit determinant

        Returns:
            PoseSE3: The validated pose

        Raises:
            ValueError: If the rotation block is not a proper rotation
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"Expected a 3x4 or 4x4 matrix, got shape {matrix.shape}")
        rotation = matrix[:3, :3]
        if not is_rotation(rotation, tolerance):
            raise ValueError("Rotation block is not orthonormal with determinant +1")
        return cls(rotation, matrix[:3, 3])

    @classmethod
    def from_yaw(cls, yaw: float, translation: Iterable[float]) -> "PoseSE3":
        """Pose rotated by ``yaw`` radians about the world z axis."""
        c, s = math.cos(yaw), math.sin(yaw)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rotation, np.asarray(list(translation), dtype=np.float64))

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Return ``self ∘ other``."""
        return PoseSE3(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "PoseSE3") -> "PoseSE3":
        return self.compose(other)

    def inverse(self) -> "PoseSE3":
        rotation_t = self.rotation.T
        return PoseSE3(rotation_t, -(rotation_t @ self.translation))

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 3) array of points through this pose."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse_transform_points(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) points from the target frame back into this pose's frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def distance_to(self, other: "PoseSE3") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def allclose(self, other: "PoseSE3", atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))


def is_rotation(rotation: np.ndarray, tolerance: float = ORTHONORMAL_TOLERANCE) -> bool:
    """Check R·Rᵀ = I and det(R) = +1 within ``tolerance``."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        return False
    if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > tolerance:
        return False
    return abs(np.linalg.det(rotation) - 1.0) <= tolerance


def translation_offset(pose: PoseSE3, offset: Iterable[float]) -> PoseSE3:
    """Pose displaced by ``offset`` expressed in its own frame."""
    return pose.compose(PoseSE3(np.eye(3), np.asarray(list(offset), dtype=np.float64)))


def fit_rigid_transform(source: np.ndarray, target: np.ndarray, with_scale: bool = False):
    """Least-squares similarity mapping ``source`` onto ``target``.

    Minimizes Σ‖target_i − (s·R·source_i + t)‖² in closed form (Umeyama's
    SVD solution with the reflection guard).

    Args:
        source: (N, 3) points to be mapped
        target: (N, 3) corresponding points
        with_scale: Estimate the scale factor; otherwise scale is 1

    Returns:
        tuple: (rotation (3, 3), translation (3,), scale)

    Raises:
        DegenerateConfigurationError: Fewer than 3 points or all points collinear
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError(f"Point sets must both be (N, 3), got {source.shape} and {target.shape}")
    count = source.shape[0]
    if count < 3:
        raise DegenerateConfigurationError(f"Need at least 3 correspondences, got {count}")

    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    source_centered = source - source_mean
    target_centered = target - target_mean

    spread = np.linalg.svd(source_centered, compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-12 * spread[0]:
        raise DegenerateConfigurationError("Correspondences are collinear or coincident")

    covariance = target_centered.T @ source_centered / count
    u, singular, vt = np.linalg.svd(covariance)
    reflection = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        reflection[2, 2] = -1.0
    rotation = u @ reflection @ vt

    if with_scale:
        variance = (source_centered ** 2).sum() / count
        scale = float(np.trace(np.diag(singular) @ reflection) / variance)
    else:
        scale = 1.0

    translation = target_mean - scale * rotation @ source_mean
    return rotation, translation, scale
