"""Synthetic camera trajectories with ray-cast patch geometry and procedural appearance."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..core import ModelDims
from ..geometry import Intrinsics, PointMap, Pose, rotation_about
from .model import TOY_DIMS

PATCH_PX = 14


class SceneKind(str, enum.Enum):
    ORBIT = "orbit"
    CORRIDOR = "corridor"
    RANDOMWALK = "randomwalk"


def _ray_cylinder(origin, dirs, radius):
    """Distance along each ray to a vertical (y-axis) cylinder enclosing the origin."""
    ox, oz = origin[0], origin[2]
    dx, dz = dirs[:, 0], dirs[:, 2]
    a = dx**2 + dz**2
    b = 2 * (ox * dx + oz * dz)
    c = ox**2 + oz**2 - radius**2
    disc = np.sqrt(np.maximum(b**2 - 4 * a * c, 0.0))
    return (-b + disc) / (2 * np.maximum(a, 1e-12))


def _ray_sphere(origin, dirs, radius):
    b = 2 * dirs @ origin
    c = origin @ origin - radius**2
    disc = np.sqrt(np.maximum(b**2 - 4 * c, 0.0))
    return (-b + disc) / 2


@dataclass
class TrajectoryScene:
    """Deterministic camera path through a closed synthetic environment.

    Orbit spins the camera on a small circle inside a textured cylinder, corridor walks it
    down a tube, random-walk drifts pose inside a sphere.
    """

    kind: SceneKind = SceneKind.ORBIT
    seed: int = 0
    num_frames: int = 1000
    dims: ModelDims = TOY_DIMS
    feature_dim: int = 32
    orbit_period: int = 400
    hfov_deg: float = 60.0
    noise: float = 0.05
    _walk: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        self.kind = SceneKind(self.kind)
        rng = np.random.default_rng([self.seed, 7])
        self.intrinsics = Intrinsics.from_fov(
            self.dims.patch_cols * PATCH_PX, self.dims.patch_rows * PATCH_PX, self.hfov_deg
        )
        self._freq = rng.normal(0.0, 1.2, (self.feature_dim, 3))
        self._phase = rng.uniform(0, 2 * np.pi, self.feature_dim)
        self._amp = rng.uniform(0.3, 1.0, self.feature_dim)
        n_blobs = 24
        self._blob_centers = rng.normal(0.0, 4.0, (n_blobs, 3))
        self._blob_vecs = rng.normal(0.0, 2.5, (n_blobs, self.feature_dim))
        self._walk_rng = np.random.default_rng([self.seed, 11])
        self._walk = [Pose.identity()]
        u = (np.arange(self.dims.patch_cols) + 0.5) * PATCH_PX
        v = (np.arange(self.dims.patch_rows) + 0.5) * PATCH_PX
        uu, vv = np.meshgrid(u, v)
        rays = self.intrinsics.backproject(uu.ravel(), vv.ravel(), np.ones(uu.size))
        self._rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)

    def pose(self, t: int) -> Pose:
        if self.kind is SceneKind.ORBIT:
            theta = 2 * np.pi * t / self.orbit_period
            R = rotation_about([0, 1, 0], theta)
            return Pose(R, R @ np.array([0.0, 0.0, 0.5]))
        if self.kind is SceneKind.CORRIDOR:
            yaw = 0.15 * np.sin(2 * np.pi * t / 150)
            return Pose(rotation_about([0, 1, 0], yaw), [0.3 * np.sin(t / 40), 0.0, 0.05 * t])
        while len(self._walk) <= t:
            prev = self._walk[-1]
            axis = self._walk_rng.normal(size=3)
            dR = rotation_about(axis, self._walk_rng.normal(0.0, 0.03))
            step = prev.translation + self._walk_rng.normal(0.0, 0.05, 3)
            norm = np.linalg.norm(step)
            if norm > 3.0:
                step *= (6.0 - norm) / norm
            self._walk.append(Pose(prev.rotation @ dR, step))
        return self._walk[t]

    def geometry(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        """World points hit by each patch ray and their depths along the optical axis."""
        dirs = self._rays @ pose.rotation.T
        o = pose.translation
        if self.kind is SceneKind.ORBIT:
            s = _ray_cylinder(o, dirs, 5.0)
        elif self.kind is SceneKind.CORRIDOR:
            tube = _ray_cylinder(o[[0, 2, 1]], dirs[:, [0, 2, 1]], 2.0)
            cap = np.where(dirs[:, 2] > 1e-9, 25.0 / np.maximum(dirs[:, 2], 1e-9), np.inf)
            s = np.minimum(tube, cap)
        else:
            s = _ray_sphere(o, dirs, 6.0)
        points = o + s[:, None] * dirs
        depth = s * self._rays[:, 2]
        return points, depth

    def appearance(self, points: np.ndarray, t: int) -> np.ndarray:
        base = self._amp * np.cos(points @ self._freq.T + self._phase)
        d2 = ((points[:, None, :] - self._blob_centers[None]) ** 2).sum(-1)
        base += np.exp(-d2 / 0.8) @ self._blob_vecs
        jitter = np.random.default_rng([self.seed, 13, t]).normal(0.0, self.noise, base.shape)
        return base + jitter

    def frame(self, t: int) -> tuple[Pose, PointMap, np.ndarray]:
        if not 0 <= t < self.num_frames:
            raise IndexError(f"frame {t} outside [0, {self.num_frames})")
        pose = self.pose(t)
        points, depth = self.geometry(pose)
        conf = np.clip(1.0 / (1.0 + depth), np.finfo(float).tiny, 1.0)
        return pose, PointMap(points, conf), self.appearance(points, t)
