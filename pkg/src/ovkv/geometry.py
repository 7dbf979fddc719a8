"""Rigid poses, pinhole projection and view-overlap coverage."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_MIN = 1e-6


@dataclass(frozen=True)
class Pose:
    """Camera-to-world transform: ``p_world = R @ p_cam + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) <= tol)

    def as_row_major(self) -> np.ndarray:
        """12 reals: the rows of [R | t]."""
        return self.matrix()[:3].ravel()

    @classmethod
    def from_row_major(cls, values) -> Pose:
        m = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> Intrinsics:
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)

    def project(self, cam_points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pixel coordinates (u, v) and a mask of points in front of the camera."""
        p = np.asarray(cam_points, dtype=np.float64)
        z = p[:, 2]
        front = z > Z_MIN
        safe_z = np.where(front, z, 1.0)
        u = self.fx * p[:, 0] / safe_z + self.cx
        v = self.fy * p[:, 1] / safe_z + self.cy
        return u, v, front

    def backproject(self, u, v, depth) -> np.ndarray:
        u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
        x = (u - self.cx) / self.fx * depth
        y = (v - self.cy) / self.fy * depth
        return np.stack([x, y, depth], axis=-1)


@dataclass(frozen=True)
class PointMap:
    """Patch-resolution world points with per-point confidence."""

    points: np.ndarray  # (N_p, 3)
    confidence: np.ndarray  # (N_p,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if len(pts) != len(conf):
            raise ValueError(f"{len(pts)} points but {len(conf)} confidences")
        if not np.isfinite(conf).all():
            raise ValueError("confidences must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)

    def __len__(self):
        return len(self.points)


def compose_relative(current: Pose, anchor: Pose) -> Pose:
    """Transform from the anchor camera frame into the current camera frame."""
    return current.inverse() @ anchor


def coverage_ratio(anchor_points: PointMap, anchor_pose: Pose, current_pose: Pose, cam: Intrinsics) -> float:
    """Fraction of the anchor's points that land inside the current image, in front of the camera."""
    n = len(anchor_points)
    if n == 0:
        raise ValueError("coverage needs at least one point")
    in_anchor = anchor_pose.inverse().apply(anchor_points.points)
    in_current = compose_relative(current_pose, anchor_pose).apply(in_anchor)
    u, v, front = cam.project(in_current)
    inside = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return float(np.count_nonzero(inside)) / n
