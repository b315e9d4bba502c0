"""Pinhole camera poses.

Conventions, used everywhere in the package:
  * Pixel (x, y) means column x, row y; the coordinate of a pixel is its
    center, pixel (0, 0) sits at coordinate (0, 0) in the image top-left.
  * Camera frame: x right, y down, z forward (into the scene).
  * A pose stores the camera-from-canonical rigid transform
    X_cam = R @ X_canonical + t. The canonical camera is R = I, t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray       # (3, 3) camera-from-canonical
    translation: np.ndarray    # (3,)
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-6")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")

    @property
    def intrinsic_matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def inverse_intrinsic_matrix(self):
        return np.array([[1.0 / self.fx, 0.0, -self.cx / self.fx],
                         [0.0, 1.0 / self.fy, -self.cy / self.fy],
                         [0.0, 0.0, 1.0]])

    @property
    def camera_center(self):
        """Camera center expressed in canonical coordinates."""
        return -self.rotation.T @ self.translation

    def is_identity(self):
        return (np.array_equal(self.rotation, np.eye(3))
                and not np.any(self.translation))


def default_intrinsics(height, width=None):
    """Harness default: focal length = image height, principal point at
    the center pixel."""
    width = height if width is None else width
    f = float(height)
    return {"fx": f, "fy": f, "cx": (width - 1) / 2.0, "cy": (height - 1) / 2.0}


def identity_pose(height, width=None, **overrides):
    intr = default_intrinsics(height, width)
    intr.update(overrides)
    return CameraPose(rotation=np.eye(3), translation=np.zeros(3), **intr)


def rotation_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def orbit_pose(yaw, pitch, look_at_depth, height, width=None, **overrides):
    """Camera orbiting the canonical point (0, 0, look_at_depth).

    Yaw and pitch are radians; (0, 0) reproduces the canonical pose
    exactly. The orbit keeps the look-at point on the principal axis at
    its original distance.
    """
    intr = default_intrinsics(height, width)
    intr.update(overrides)
    if yaw == 0.0 and pitch == 0.0:
        return CameraPose(rotation=np.eye(3), translation=np.zeros(3), **intr)
    target = np.array([0.0, 0.0, float(look_at_depth)])
    r = rotation_x(pitch) @ rotation_y(yaw)
    forward = r.T @ np.array([0.0, 0.0, 1.0])
    center = target - float(look_at_depth) * forward
    return CameraPose(rotation=r, translation=-r @ center, **intr)


def viewing_direction(pose: CameraPose):
    """Unit vector from the scene toward the camera, in canonical
    coordinates. The canonical pose gives (0, 0, -1)."""
    return -pose.rotation[2, :].copy()


def pixel_view_directions(pose: CameraPose, points):
    """Per-point unit directions from canonical 3-d points toward the
    camera center. ``points`` is (..., 3)."""
    d = pose.camera_center - np.asarray(points, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    return d / norm
