"""Orbit cameras, pinhole projection and the dual-circle pose schedule.

Conventions: world is right-handed and y-up; horizontal angle 0 puts the
camera on +z. Camera space follows the OpenCV layout (x right, y down,
z forward), so depth is the camera-space z coordinate. Pixel centres sit
at half-integer coordinates and the principal point is the image centre.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidParameterError

NEAR_PLANE = 0.01
DEFAULT_RADIUS = 3.0
DEFAULT_FOV_Y = 50.0
VERTICAL_POSE_SCALE = 0.3


class Circle(str, enum.Enum):
    HORIZONTAL = "h"
    VERTICAL = "v"


@dataclass(frozen=True)
class CameraIntrinsics:
    fov_y: float = DEFAULT_FOV_Y
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not 0 < self.fov_y < 180:
            raise InvalidParameterError(f"fov_y must be in (0, 180), got {self.fov_y}")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("image dimensions must be >= 1")

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.fov_y) / 2)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height


@dataclass(frozen=True)
class OrbitPose:
    circle: Circle
    angle: float
    radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidParameterError("orbit radius must be positive")
        object.__setattr__(self, "circle", Circle(self.circle))

    @property
    def name(self) -> str:
        """File stem used by the guidance directory protocol, e.g. ``h_030``."""
        return f"{self.circle.value}_{int(round(self.angle)) % 360:03d}"


@dataclass(frozen=True)
class CameraExtrinsics:
    """World-to-camera transform: x_cam = rotation @ x_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def orbit_to_extrinsics(pose: OrbitPose) -> CameraExtrinsics:
    a = math.radians(pose.angle)
    s, c = math.sin(a), math.cos(a)
    if pose.circle is Circle.HORIZONTAL:
        center = pose.radius * np.array([s, 0.0, c])
        up = np.array([0.0, 1.0, 0.0])
    else:
        center = pose.radius * np.array([0.0, s, c])
        # tangent of the circle, so the up vector is never parallel to forward
        up = np.array([0.0, c, -s])
    forward = -center / pose.radius
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return CameraExtrinsics(rot, -rot @ center)


def pose_schedule(step_degrees: int = 30, radius: float = DEFAULT_RADIUS) -> list[OrbitPose]:
    """Horizontal circle poses followed by vertical circle poses."""
    if step_degrees <= 0 or 360 % step_degrees:
        raise InvalidParameterError(f"step {step_degrees} does not divide 360")
    angles = range(0, 360, step_degrees)
    return [OrbitPose(Circle.HORIZONTAL, float(a), radius) for a in angles] + [
        OrbitPose(Circle.VERTICAL, float(a), radius) for a in angles
    ]


def pose_weight(pose: OrbitPose, clamp: bool = True) -> float:
    """View-dependent colour-loss weight.

    cos(azimuth) on the horizontal circle, 0.3*cos(elevation) on the vertical
    one. Back-facing views are clamped to zero unless ``clamp`` is off.
    """
    w = math.cos(math.radians(pose.angle))
    if pose.circle is Circle.VERTICAL:
        w *= VERTICAL_POSE_SCALE
    # cos(90 deg) is 6e-17 in floating point; snap the exact quarter turns
    if pose.angle % 90 == 0 and pose.angle % 180 != 0:
        w = 0.0
    return max(w, 0.0) if clamp else w


def _camera_point(point, extrinsics: CameraExtrinsics) -> np.ndarray:
    p = extrinsics.to_camera(point)
    if p[2] <= NEAR_PLANE:
        raise BehindCameraError(f"point at depth {p[2]:.4g} is behind the near plane")
    return p


def project_point(point, extrinsics: CameraExtrinsics, intrinsics: CameraIntrinsics):
    """Return (pixel (u, v), depth) for a world point."""
    x, y, z = _camera_point(point, extrinsics)
    f = intrinsics.focal
    cx, cy = intrinsics.center
    return np.array([f * x / z + cx, f * y / z + cy]), float(z)


def projection_jacobian(point, extrinsics: CameraExtrinsics, intrinsics: CameraIntrinsics):
    """2x3 Jacobian of the pixel coordinates w.r.t. the camera-space point."""
    x, y, z = _camera_point(point, extrinsics)
    f = intrinsics.focal
    return np.array([[f / z, 0.0, -f * x / z**2], [0.0, f / z, -f * y / z**2]])
