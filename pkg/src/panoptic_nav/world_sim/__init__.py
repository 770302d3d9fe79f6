"""Synthetic indoor scenes and a ray-cast pinhole renderer."""

from .camera import ROBOT_CAMERA, SIM_CAMERA, CameraIntrinsics, Pose, pixel_directions, subregion_directions
from .classes import CLASS_IDS, CLASS_NAMES, FEATURE_DIM, NUM_CLASSES, class_feature, class_feature_table
from .layouts import generate_scene, generate_scene_text, template_names
from .render import (DepthImage, FeatureImage, SemanticImage, observe, raycast_depth, raycast_semantic,
                     render_feature)
from .scene import SceneError, SceneSpec, load_scene

__all__ = [
    "CLASS_IDS", "CLASS_NAMES", "FEATURE_DIM", "NUM_CLASSES", "ROBOT_CAMERA", "SIM_CAMERA",
    "CameraIntrinsics", "DepthImage", "FeatureImage", "Pose", "SceneError", "SceneSpec", "SemanticImage",
    "class_feature", "class_feature_table", "generate_scene", "generate_scene_text", "load_scene", "observe",
    "pixel_directions", "raycast_depth", "raycast_semantic", "render_feature", "subregion_directions",
    "template_names",
]
