"""Rigid transforms and least-squares point-set registration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation must be proper orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Map points (n, 3) or a single 3-vector."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], dtype=float).reshape(3, 3), d["translation"])


def register_rigid(points_robot, points_camera) -> RigidTransform:
    """Least-squares rigid transform taking camera-frame points onto robot-frame points.

    Centroid alignment followed by an SVD of the cross-covariance; the sign of
    the smallest singular direction is flipped when needed so the result is a
    proper rotation.
    """
    dst = np.asarray(points_robot, dtype=float)
    src = np.asarray(points_camera, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("point sets must both be (n, 3) with equal n")
    if src.shape[0] < 3:
        raise DegenerateGeometryError("need at least 3 point pairs")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    a = src - mu_src
    b = dst - mu_dst
    # collinear sets leave rotation about the line undetermined
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0 or sv[1] / sv[0] < 1e-10:
        raise DegenerateGeometryError("points are coincident or collinear")

    H = a.T @ b
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_dst - R @ mu_src
    return RigidTransform(R, t)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def uniform_ball_displacements(rng: np.random.Generator, n: int, max_magnitude: float) -> np.ndarray:
    """Displacements with uniformly random direction and magnitude uniform in [0, max]."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0.0, max_magnitude, size=(n, 1))
