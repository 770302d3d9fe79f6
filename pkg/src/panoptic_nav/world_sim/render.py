"""Ray-cast depth, semantic and feature images of a scene."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..config import DEFAULT, SimConfig
from .camera import CameraIntrinsics, Pose, camera_position, pixel_directions
from .classes import FEATURE_DIM, class_feature_table
from .scene import SceneSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DepthImage:
    data: np.ndarray  # (H, W) range in metres, 0 = no hit
    out_of_bounds: bool = False

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class SemanticImage:
    data: np.ndarray  # (H, W) class ids
    out_of_bounds: bool = False

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class FeatureImage:
    data: np.ndarray  # (H, W, D) float32 unit vectors, zero where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.valid.shape

    def mean_feature(self) -> np.ndarray:
        """Unit-normalized mean of the valid pixel features (zero if none)."""
        if not self.valid.any():
            return np.zeros(self.data.shape[-1])
        m = self.data[self.valid].astype(np.float64).mean(axis=0)
        n = np.linalg.norm(m)
        return m / n if n > 0 else m


def cast(scene: SceneSpec, pose: Pose, cam: CameraIntrinsics, sim: SimConfig = DEFAULT.sim,
         backend=None):
    """Shared ray cast: ``(range (H, W), box index (H, W), out_of_bounds)``."""
    h, w = cam.height, cam.width
    if not scene.inside_xy(pose.x, pose.y):
        log.warning("pose (%.2f, %.2f) outside scene bounds; returning empty images", pose.x, pose.y)
        return np.zeros((h, w)), np.full((h, w), -1, np.int32), True
    k = backend or _kernels.active
    dirs = pixel_directions(cam, pose.yaw, sim.ray_model).reshape(-1, 3)
    t, idx = k.raycast(camera_position(pose, sim.camera_height), dirs, scene.box_min, scene.box_max,
                       min(cam.max_range, sim.max_range))
    return t.reshape(h, w), idx.reshape(h, w), False


def raycast_depth(scene, pose, cam, sim: SimConfig = DEFAULT.sim) -> DepthImage:
    t, _, oob = cast(scene, pose, cam, sim)
    return DepthImage(t, oob)


def _semantic_from(scene, idx):
    sem = np.zeros(idx.shape, dtype=np.uint8)
    hit = idx >= 0
    sem[hit] = scene.box_class[idx[hit]]
    return sem


def raycast_semantic(scene, pose, cam, sim: SimConfig = DEFAULT.sim) -> SemanticImage:
    _, idx, oob = cast(scene, pose, cam, sim)
    return SemanticImage(_semantic_from(scene, idx), oob)


def features_of(sem: np.ndarray) -> FeatureImage:
    table = class_feature_table().astype(np.float32)
    valid = sem > 0
    data = np.zeros(sem.shape + (FEATURE_DIM,), dtype=np.float32)
    data[valid] = table[sem[valid]]
    return FeatureImage(data, valid)


def render_feature(scene, pose, cam, sim: SimConfig = DEFAULT.sim) -> FeatureImage:
    return features_of(raycast_semantic(scene, pose, cam, sim).data)


def observe(scene, pose, cam, sim: SimConfig = DEFAULT.sim, with_features: bool = True):
    """Depth, semantic and (optionally) feature images from one ray cast."""
    t, idx, oob = cast(scene, pose, cam, sim)
    sem = _semantic_from(scene, idx)
    feat = features_of(sem) if with_features else None
    return DepthImage(t, oob), SemanticImage(sem, oob), feat
