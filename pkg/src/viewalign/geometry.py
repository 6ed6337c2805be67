"""Pinhole camera model: projection, back-projection, and pose algebra.

Coordinate conventions
----------------------
Camera frame: right-handed, X right, Y down, Z forward along the optical
axis.  Pixel frame: origin at the top-left corner, u rightward, v downward.
A pose (R, t) maps coordinates between frames as ``x_out = R @ x_in + t``.
Depth values that are zero or non-finite mark missing measurements, matching
the output of commodity RGB-D sensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class BehindCamera(Exception):
    """Point has non-positive depth in the camera frame."""


class InvalidDepth(Exception):
    """Depth is missing (zero sentinel), negative, or non-finite."""


class PixelPoint(NamedTuple):
    u: float
    v: float


class ScenePoint(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Calibration of a pinhole camera, stored as the usual 3x3 form."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def orthonormalize_rotation(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto the nearest element of SO(3)."""
    u, _, vt = np.linalg.svd(r)
    if np.linalg.det(u @ vt) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
    return u @ vt


_ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraPose:
    """Rigid transform with ``rotation`` in SO(3) and ``translation`` in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.abs(r.T @ r - np.eye(3)).max() > _ROTATION_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ROTATION_TOL:
            raise ValueError("rotation determinant must be +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply the pose to an (n, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Composition a∘b: apply b first, then a.

    The rotation factor is re-orthonormalized so that long chains of
    compositions (the iterative adjustment loop) cannot drift out of SO(3).
    """
    r = orthonormalize_rotation(a.rotation @ b.rotation)
    t = a.rotation @ b.translation + a.translation
    return CameraPose(r, t)


def invert(a: CameraPose) -> CameraPose:
    rt = a.rotation.T
    return CameraPose(rt, -rt @ a.translation)


def rotation_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula; ``w`` is axis * angle in radians."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    k = _skew(w)
    if theta < 1e-12:
        return orthonormalize_rotation(np.eye(3) + k)
    k = k / theta
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def axis_angle_from_rotation(r: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rotation_from_axis_angle`; angle in [0, pi]."""
    r = np.asarray(r, dtype=float)
    cos_theta = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    if math.pi - theta < 1e-6:
        # Near pi the skew part vanishes; recover the axis from R + I.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # Fix signs using the largest component.
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k and m[k, i] < 0:
                    axis[i] = -axis[i]
        axis = axis / np.linalg.norm(axis)
        return axis * theta
    vec = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return vec / (2.0 * math.sin(theta)) * theta


def rotation_angle(r: np.ndarray) -> float:
    """Rotation angle of a rotation matrix, radians in [0, pi]."""
    cos_theta = max(-1.0, min(1.0, (np.trace(np.asarray(r, dtype=float)) - 1.0) / 2.0))
    return math.acos(cos_theta)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


@dataclass(frozen=True)
class Correspondence:
    """A reference-image pixel paired with a 3D point in the current view."""

    reference_pixel: PixelPoint
    scene_point: ScenePoint
    descriptor_pair: tuple[np.ndarray, np.ndarray]
    saliency: float

    def __post_init__(self):
        if not self.scene_point.z > 0:
            raise ValueError(f"scene point must have positive depth, got {self.scene_point.z}")
        if not 0.0 <= self.saliency <= 1.0:
            raise ValueError(f"saliency must be in [0, 1], got {self.saliency}")


def project(intr: CameraIntrinsics, pose: CameraPose, p: ScenePoint) -> PixelPoint:
    """Project a 3D point through the pose and intrinsics.

    Raises :class:`BehindCamera` when the transformed point has Z <= 0.
    """
    x, y, z = pose.rotation @ np.asarray(p, dtype=float) + pose.translation
    if z <= 0:
        raise BehindCamera(f"transformed depth {z} is not positive")
    return PixelPoint(intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def back_project(intr: CameraIntrinsics, px: PixelPoint, depth: float) -> ScenePoint:
    """Lift a pixel to the camera frame at the given metric depth."""
    if not math.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth {depth} is missing or invalid")
    return ScenePoint(
        (px.u - intr.cx) * depth / intr.fx,
        (px.v - intr.cy) * depth / intr.fy,
        depth,
    )


def reprojection_error(intr: CameraIntrinsics, pose: CameraPose, c: Correspondence) -> float:
    """Pixel distance between the reference pixel and the projected scene point.

    Unprojectable points (behind the camera) return ``math.inf`` rather than
    raising, so robust loops can treat them as arbitrarily bad.
    """
    try:
        proj = project(intr, pose, c.scene_point)
    except BehindCamera:
        return math.inf
    return math.hypot(c.reference_pixel.u - proj.u, c.reference_pixel.v - proj.v)


def project_points(
    intr: CameraIntrinsics, pose: CameraPose, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (n, 3) array.

    Returns ``(uv, depths)``; rows with non-positive depth hold NaN pixels.
    """
    cam = pose.transform(points)
    z = cam[:, 2]
    uv = np.full((len(cam), 2), np.nan)
    ok = z > 0
    uv[ok, 0] = intr.fx * cam[ok, 0] / z[ok] + intr.cx
    uv[ok, 1] = intr.fy * cam[ok, 1] / z[ok] + intr.cy
    return uv, z


def reprojection_errors(
    intr: CameraIntrinsics,
    pose: CameraPose,
    reference_px: np.ndarray,
    points: np.ndarray,
) -> np.ndarray:
    """Per-point reprojection errors; ``inf`` where the point is behind the camera."""
    uv, z = project_points(intr, pose, points)
    errs = np.full(len(points), np.inf)
    ok = z > 0
    diff = np.asarray(reference_px, dtype=float)[ok] - uv[ok]
    errs[ok] = np.hypot(diff[:, 0], diff[:, 1])
    return errs
