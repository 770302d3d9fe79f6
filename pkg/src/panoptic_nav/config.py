"""Numeric defaults for every module, overridable from a JSON file.

The file named by ``PANOPTIC_NAV_CONFIG`` holds one object per section, for
example ``{"fields": {"k": 12}, "harness": {"max_steps": 60}}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

ENV_VAR = "PANOPTIC_NAV_CONFIG"


@dataclass(frozen=True)
class SimConfig:
    camera_height: float = 0.88
    agent_radius: float = 0.18
    max_range: float = 10.0
    ray_model: str = "linear"  # "linear" angle grid or "pinhole" tangent grid
    # vertical band of the agent body used for collisions and footprints
    body_low: float = 0.10
    body_high: float = 1.60


@dataclass(frozen=True)
class MapConfig:
    size: int = 512
    resolution: float = 0.05
    crop: int = 192
    obstacle_low: float = 0.10
    obstacle_high: float = 1.60
    # hit points are pushed this far past the surface so they land inside it
    surface_bias: float = 1e-3


@dataclass(frozen=True)
class TraversableConfig:
    sigma: float = 5.0
    k: int = 6
    min_dist: float = 0.30
    exclusion_radius: int = 0
    clearance_cells: float = 6.0
    landmark_boost: float = 1.25
    # void cells this close to the agent count as passable for reachability:
    # the ground right below the camera is outside its field of view
    blind_radius: float = 1.0


@dataclass(frozen=True)
class FieldConfig:
    voxel: float = 0.10
    coarse_factor: int = 4
    k: int = 8
    radius: float = 0.40
    bandwidth: float = 0.15
    density_scale: float = 25.0
    n_samples: int = 24
    extension: float = 0.20
    near: float = 0.05
    march_step: float = 0.10
    hit_radius: float = 0.10
    fallback_depth: float = 3.0
    max_range: float = 10.0
    stride: int = 2
    capacity: int = 2_000_000
    grid: int = 8


@dataclass(frozen=True)
class HarnessConfig:
    success_radius: float = 3.0
    max_steps: int = 40
    substep: float = 0.25
    alpha: float = 0.7
    stop_similarity: float = 0.8
    detect_similarity: float = 0.5  # goal estimate threshold; stopping still needs stop_similarity
    stop_radius: float = 2.0
    stop_distance: float = 0.5
    recovery_turn_deg: float = 60.0
    waypoint_k: int = 12
    waypoint_min_dist: float = 1.0
    visit_radius: float = 1.0
    cam_width: int = 33
    cam_height: int = 33
    hfov: float = 90.0
    vfov: float = 90.0
    seed_yaw_jitter_deg: float = 10.0
    seed_pos_jitter: float = 0.10
    refiner: str = "holefill"
    use_positional_embedding: bool = True
    policy: str = "field_similarity"


@dataclass(frozen=True)
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    maps: MapConfig = field(default_factory=MapConfig)
    traversable: TraversableConfig = field(default_factory=TraversableConfig)
    fields: FieldConfig = field(default_factory=FieldConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def updated(self, overrides: dict) -> "Config":
        """Return a copy with ``{section: {key: value}}`` overrides applied."""
        sections = {}
        for f in fields(self):
            current = getattr(self, f.name)
            patch = overrides.get(f.name, {})
            unknown = set(patch) - {g.name for g in fields(current)}
            if unknown:
                raise ValueError(f"unknown {f.name} config keys: {sorted(unknown)}")
            sections[f.name] = replace(current, **patch)
        unknown = set(overrides) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return Config(**sections)


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Defaults, then the file at ``path`` or ``$PANOPTIC_NAV_CONFIG``."""
    path = path or os.environ.get(ENV_VAR)
    cfg = Config()
    if path:
        cfg = cfg.updated(json.loads(Path(path).read_text()))
    return cfg


DEFAULT = Config()
