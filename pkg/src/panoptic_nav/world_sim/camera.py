"""Poses, camera intrinsics and the ray-direction grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return -math.pi if w >= math.pi else w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotated(self, dyaw: float) -> "Pose":
        return Pose(self.x, self.y, self.z, self.yaw + dyaw)

    def moved_to(self, x: float, y: float, yaw: float | None = None) -> "Pose":
        return Pose(x, y, self.z, self.yaw if yaw is None else yaw)


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    hfov: float  # degrees
    vfov: float  # degrees
    max_range: float = 10.0

    def __post_init__(self):
        if not (0 < self.hfov < 180 and 0 < self.vfov < 180):
            raise ValueError(f"fov must lie in (0, 180) degrees, got {self.hfov}x{self.vfov}")
        if self.width < 8 or self.height < 8:
            raise ValueError(f"image must be at least 8x8, got {self.width}x{self.height}")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


SIM_CAMERA = CameraIntrinsics(65, 65, 90.0, 90.0)
ROBOT_CAMERA = CameraIntrinsics(69, 43, 69.0, 42.0)


def camera_frame_dirs(cam: CameraIntrinsics, s_col: np.ndarray, s_row: np.ndarray,
                      model: str = "linear") -> np.ndarray:
    """Unit directions (x forward, y left, z up) for normalized image
    coordinates in [0, 1]; column 0 is the left edge, row 0 the top edge."""
    s_col, s_row = np.broadcast_arrays(np.asarray(s_col, float), np.asarray(s_row, float))
    if model == "linear":
        az = math.radians(cam.hfov) / 2.0 * (1.0 - 2.0 * s_col)
        el = math.radians(cam.vfov) / 2.0 * (1.0 - 2.0 * s_row)
        ce = np.cos(el)
        d = np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)
    elif model == "pinhole":
        u = math.tan(math.radians(cam.hfov) / 2.0) * (1.0 - 2.0 * s_col)
        v = math.tan(math.radians(cam.vfov) / 2.0) * (1.0 - 2.0 * s_row)
        d = np.stack([np.ones_like(u), u, v], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
    else:
        raise ValueError(f"unknown ray model {model!r}")
    return d


def rotate_yaw(d: np.ndarray, yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    out = np.empty_like(d)
    out[..., 0] = c * d[..., 0] - s * d[..., 1]
    out[..., 1] = s * d[..., 0] + c * d[..., 1]
    out[..., 2] = d[..., 2]
    return out


def pixel_directions(cam: CameraIntrinsics, yaw: float, model: str = "linear") -> np.ndarray:
    """World-frame ray directions ``(H, W, 3)`` for every pixel."""
    s_col = np.arange(cam.width) / (cam.width - 1)
    s_row = np.arange(cam.height) / (cam.height - 1)
    d = camera_frame_dirs(cam, s_col[None, :], s_row[:, None], model)
    return rotate_yaw(d, yaw)


def subregion_directions(cam: CameraIntrinsics, yaw: float, grid: int = 8,
                         model: str = "linear") -> np.ndarray:
    """World-frame centre rays ``(grid, grid, 3)`` of the angular subregions."""
    s = (np.arange(grid) + 0.5) / grid
    d = camera_frame_dirs(cam, s[None, :], s[:, None], model)
    return rotate_yaw(d, yaw)


def camera_position(pose: Pose, camera_height: float) -> np.ndarray:
    return np.array([pose.x, pose.y, pose.z + camera_height])
