"""Pinhole camera model and rigid transforms shared by every sensor.

Frame convention: x right, y down, z forward (camera frame). Depth maps
store camera-frame z, not ray length. Pixel assignment rounds to nearest
with ties toward +inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"focal lengths must be positive: {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ConfigurationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class PixelSample:
    row: int
    col: int
    depth: float


class RigidPose:
    """Rotation + translation; validated orthonormal with det +1."""

    def __init__(self, rotation, translation):
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ConfigurationError("pose needs a 3x3 rotation and a 3-vector translation")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ConfigurationError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ConfigurationError("rotation determinant is not +1 within 1e-9")
        self.rotation = r
        self.translation = t

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)


def _round_half_up(v):
    return np.floor(np.asarray(v) + 0.5).astype(np.int64)


def project_points(k: CameraIntrinsics, xyz: np.ndarray):
    """Vectorized projection: (n,3) -> (rows, cols, depths, valid)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    z = xyz[:, 2]
    in_front = z > 1e-6
    zsafe = np.where(in_front, z, 1.0)
    cols = _round_half_up(k.cx + k.fx * xyz[:, 0] / zsafe)
    rows = _round_half_up(k.cy + k.fy * xyz[:, 1] / zsafe)
    valid = in_front & (rows >= 0) & (rows < k.height) & (cols >= 0) & (cols < k.width)
    return rows, cols, z, valid


def project_point(k: CameraIntrinsics, p: Point3):
    """One point -> PixelSample, or None when behind camera / out of frame."""
    rows, cols, z, valid = project_points(k, p.as_array()[None, :])
    if not valid[0]:
        return None
    return PixelSample(row=int(rows[0]), col=int(cols[0]), depth=float(z[0]))


def backproject(k: CameraIntrinsics, row: int, col: int, depth: float) -> Point3:
    if depth <= 0:
        raise UsageError(f"backproject needs depth > 0, got {depth}")
    return Point3(
        x=(col - k.cx) * depth / k.fx,
        y=(row - k.cy) * depth / k.fy,
        z=float(depth),
    )


def transform(pose: RigidPose, p: Point3) -> Point3:
    v = pose.rotation @ p.as_array() + pose.translation
    return Point3(float(v[0]), float(v[1]), float(v[2]))


def transform_points(pose: RigidPose, xyz: np.ndarray) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    return xyz @ pose.rotation.T + pose.translation


def rasterize(points, k: CameraIntrinsics) -> np.ndarray:
    """Point list -> sparse depth raster; collisions keep the nearest depth.

    0 encodes "no sample". Out-of-frustum points are silently dropped.
    """
    raster = np.zeros((k.height, k.width), dtype=np.float32)
    if len(points) == 0:
        return raster
    if isinstance(points[0], Point3):
        xyz = np.stack([p.as_array() for p in points])
    else:
        xyz = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rows, cols, z, valid = project_points(k, xyz)
    if not valid.any():
        return raster
    buf = np.full((k.height, k.width), np.inf, dtype=np.float64)
    np.minimum.at(buf, (rows[valid], cols[valid]), z[valid])
    hit = np.isfinite(buf)
    raster[hit] = buf[hit].astype(np.float32)
    return raster
