"""Rigid transforms, pinhole cameras, point clouds and 3D boxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rigid(rotation=None, translation=None):
    """4x4 homogeneous transform from a rotation matrix and a translation."""
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if translation is not None:
        T[:3, 3] = translation
    return T


def check_rigid(T, atol=1e-9):
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise ValueError(f"expected a 4x4 transform, got shape {T.shape}")
    R = T[:3, :3]
    if not np.allclose(R @ R.T, np.eye(3), atol=atol) or abs(np.linalg.det(R) - 1.0) > atol:
        raise ValueError("rotation part is not a proper rotation")
    if not np.allclose(T[3], [0, 0, 0, 1]):
        raise ValueError("last row of a rigid transform must be [0, 0, 0, 1]")
    return T


def invert_rigid(T):
    R, t = T[:3, :3], T[:3, 3]
    return rigid(R.T, -R.T @ t)


def transform_points(T, points):
    points = np.asarray(points, dtype=float)
    return points @ T[:3, :3].T + T[:3, 3]


def rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


@dataclass
class CameraModel:
    """Pinhole camera; ``pose`` maps world coordinates into the camera frame.

    The camera frame is x right, y down, z forward (OpenCV convention).
    Inputs are assumed rectified, so no distortion terms.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 1920
    height: int = 1080
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.pose = check_rigid(self.pose)

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        """Camera center in world coordinates."""
        return invert_rigid(self.pose)[:3, 3]

    def to_camera(self, points):
        return transform_points(self.pose, points)

    def project(self, points):
        """Project world points; returns (uv, depth).  uv is NaN where depth <= 0."""
        pc = self.to_camera(np.atleast_2d(points))
        z = pc[:, 2]
        front = z > 0
        uv = np.full((pc.shape[0], 2), np.nan)
        uv[front, 0] = self.fx * pc[front, 0] / z[front] + self.cx
        uv[front, 1] = self.fy * pc[front, 1] / z[front] + self.cy
        return uv, z

    def with_pose(self, pose):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "resolution": [self.width, self.height],
            "pose": np.asarray(self.pose).reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        w, h = d.get("resolution", [1920, 1080])
        pose = np.asarray(d.get("pose", np.eye(4).reshape(-1)), dtype=float).reshape(4, 4)
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(w), int(h), pose)


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class WeightedPointCloud:
    points: np.ndarray
    weights: np.ndarray
    source_frame: int = -1

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != self.points.shape[0]:
            raise ValueError("one weight per point required")
        if self.weights.size and (self.weights.min() < 0 or self.weights.max() > 1):
            raise ValueError("weights must lie in [0, 1]")

    def __len__(self):
        return self.points.shape[0]


@dataclass
class Aabb3:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=float).reshape(3)
        self.max = np.asarray(self.max, dtype=float).reshape(3)
        if np.any(self.min > self.max):
            raise ValueError("box min must not exceed max")

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    @property
    def extents(self):
        return self.max - self.min

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def contains(self, points, atol=0.0):
        p = np.atleast_2d(points)
        return np.all((p >= self.min - atol) & (p <= self.max + atol), axis=1)

    @classmethod
    def from_center(cls, center, extents):
        center = np.asarray(center, dtype=float)
        half = 0.5 * np.asarray(extents, dtype=float)
        return cls(center - half, center + half)

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["min"], d["max"])


@dataclass
class OrientedBox3:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if np.any(self.half_extents <= 0):
            raise ValueError("half extents must be positive")
        check_rigid(rigid(self.rotation))

    @property
    def volume(self):
        return float(8.0 * np.prod(self.half_extents))

    @property
    def is_axis_aligned(self):
        return bool(np.array_equal(self.rotation, np.eye(3)))

    def corners(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def aabb(self):
        c = self.corners()
        return Aabb3(c.min(axis=0), c.max(axis=0))

    def contains(self, points):
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents, axis=1)

    def transformed(self, T):
        return OrientedBox3(transform_points(T, self.center[None])[0], self.half_extents, T[:3, :3] @ self.rotation)

    @classmethod
    def from_aabb(cls, box: Aabb3):
        return cls(box.center, 0.5 * box.extents)

    def to_dict(self):
        return {
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["center"], d["half_extents"], np.asarray(d.get("rotation", np.eye(3).reshape(-1))).reshape(3, 3))
