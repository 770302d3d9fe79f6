"""3D feature fields: a voxel-indexed feature point cloud rendered into
novel-view features by volume compositing."""

from .cloud import FeatureCloud, Panorama, RaySample, RenderedView, composite, observed_coverage
from .persist import CloudFormatError, load, persist, restore, save

__all__ = [
    "CloudFormatError", "FeatureCloud", "Panorama", "RaySample", "RenderedView", "composite", "load",
    "observed_coverage", "persist", "restore", "save",
]
