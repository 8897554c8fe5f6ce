"""Pinhole camera math: pixel+depth to world point and world point to pixel.

Conventions: pixel (u, v) addresses the pixel center; integer pixel (j, i)
maps to continuous (u, v) = (j, i) exactly. Depth is the camera-frame z
coordinate, so unprojecting (u, v, d) and projecting back returns (u, v, d)
to machine precision. Continuous coordinates are snapped to pixels by
rounding half away from zero.

All arithmetic is written as explicit scalar/broadcast expressions (no
matrix-multiply dispatch) so that the single-point and batched paths make
bit-identical decisions regardless of BLAS backend or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidDepthError
from .scene import CameraView

__all__ = [
    "WorldPoint",
    "PixelSample",
    "unproject_pixel",
    "project_point",
    "depth_at",
    "unproject_pixels",
    "project_points",
    "depth_at_pixels",
    "round_half_away",
]


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class PixelSample:
    """Continuous pixel coordinates plus camera-frame depth of the point."""

    u: float
    v: float
    z_cam: float


def round_half_away(x):
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x)
    return np.copysign(np.floor(np.abs(x) + 0.5), x).astype(np.int64)


def unproject_pixels(view: CameraView, us, vs, ds) -> np.ndarray:
    """Lift pixels with depths into world space; returns (..., 3) float64.

    Camera ray K^-1 (u, v, 1) has unit z, so scaling by the stored z-depth d
    and applying the inverse rigid transform (R^T q + C) lands on the surface.
    """
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    ds = np.asarray(ds, dtype=np.float64)
    intr, R, C = view.intrinsics, view.pose.R, view.pose.C
    xc = (us - intr.px) / intr.f * ds
    yc = (vs - intr.py) / intr.f * ds
    zc = ds
    wx = R[0, 0] * xc + R[1, 0] * yc + R[2, 0] * zc + C[0]
    wy = R[0, 1] * xc + R[1, 1] * yc + R[2, 1] * zc + C[1]
    wz = R[0, 2] * xc + R[1, 2] * yc + R[2, 2] * zc + C[2]
    return np.stack([wx, wy, wz], axis=-1)


def unproject_pixel(view: CameraView, u: float, v: float, d: float) -> WorldPoint:
    """Single-pixel unprojection. Raises InvalidDepthError for d <= 0."""
    if not d > 0:
        raise InvalidDepthError(f"depth must be positive, got {d}")
    w = unproject_pixels(view, u, v, d)
    return WorldPoint(float(w[0]), float(w[1]), float(w[2]))


def project_points(view: CameraView, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world points (..., 3) into a view.

    Returns (uvz, in_front): uvz[..., 0:2] are continuous pixel coordinates,
    uvz[..., 2] the camera-frame depth; in_front is False where the point is
    at or behind the camera plane (uvz is meaningless there).
    """
    pts = np.asarray(pts, dtype=np.float64)
    intr, R, C = view.intrinsics, view.pose.R, view.pose.C
    dx = pts[..., 0] - C[0]
    dy = pts[..., 1] - C[1]
    dz = pts[..., 2] - C[2]
    qx = R[0, 0] * dx + R[0, 1] * dy + R[0, 2] * dz
    qy = R[1, 0] * dx + R[1, 1] * dy + R[1, 2] * dz
    qz = R[2, 0] * dx + R[2, 1] * dy + R[2, 2] * dz
    in_front = qz > 0
    safe_z = np.where(in_front, qz, 1.0)
    u = intr.f * qx / safe_z + intr.px
    v = intr.f * qy / safe_z + intr.py
    return np.stack([u, v, qz], axis=-1), in_front


def project_point(view: CameraView, p: WorldPoint) -> Optional[PixelSample]:
    """Project one world point; returns None when it is behind the camera."""
    uvz, in_front = project_points(view, p.as_array())
    if not in_front:
        return None
    return PixelSample(float(uvz[0]), float(uvz[1]), float(uvz[2]))


def depth_at_pixels(view: CameraView, us, vs) -> tuple[np.ndarray, np.ndarray]:
    """Stored depth at continuous pixel positions, nearest-neighbor.

    Returns (depths, valid); valid is False out of bounds or on the invalid
    sentinel, and depths is 0 there.
    """
    pu = round_half_away(us)
    pv = round_half_away(vs)
    h, w = view.depth.values.shape
    inside = (pu >= 0) & (pu < w) & (pv >= 0) & (pv < h)
    depths = np.zeros(np.shape(pu), dtype=np.float64)
    depths[inside] = view.depth.values[pv[inside], pu[inside]]
    valid = inside & (depths > 0)
    return depths, valid


def depth_at(view: CameraView, u: float, v: float) -> Optional[float]:
    """Nearest-neighbor depth lookup; None when out of bounds or invalid."""
    depths, valid = depth_at_pixels(view, np.asarray(u), np.asarray(v))
    if not valid:
        return None
    return float(depths)
