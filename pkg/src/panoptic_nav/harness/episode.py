"""Episode loop: bootstrap rotation, per-step perception, waypoint choice
and collision-checked motion."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..config import DEFAULT, Config
from ..feature_fields import FeatureCloud
from ..mapping import (GlobalMaps, RefinerConfig, crop_ego, ego_to_world, ground_project, refine,
                       semantic_only_occupancy, without_semantics)
from ..traversable import _blocked, extract_waypoints, predict_traversable, write_waypoints_csv
from ..world_sim import CameraIntrinsics, Pose, class_feature, observe
from ..world_sim.camera import camera_position, pixel_directions, subregion_directions
from ..world_sim.classes import class_id
from ..world_sim.scene import SceneSpec, segment_hits_rect
from .metrics import compute_metrics, shortest_path_length
from .policy import NO_WAYPOINT, STOP, Context, get_policy

log = logging.getLogger(__name__)

PRESETS = {
    "no_fields": dict(use_fields=False, use_memory=False, use_semantic_map=True, use_occupancy_map=True),
    "fields": dict(use_fields=True, use_memory=False, use_semantic_map=True, use_occupancy_map=True),
    "fields_memory": dict(use_fields=True, use_memory=True, use_semantic_map=True, use_occupancy_map=True),
    "no_semantic": dict(use_fields=True, use_memory=False, use_semantic_map=False, use_occupancy_map=True),
    "no_occupancy": dict(use_fields=True, use_memory=False, use_semantic_map=True, use_occupancy_map=False),
    "full": dict(use_fields=True, use_memory=False, use_semantic_map=True, use_occupancy_map=True),
}

STOP_RULE_NOTE = "stand-in stop rule: goal similarity/distance thresholds"


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    scene_id: str
    start: tuple[float, float, float]  # x, y, yaw
    goal: tuple[float, float]
    goal_class: str | int
    success_radius: float = 3.0
    max_steps: int = 40
    use_fields: bool = True
    use_memory: bool = False
    use_semantic_map: bool = True
    use_occupancy_map: bool = True
    goal_descriptor: np.ndarray | None = field(default=None, compare=False, repr=False)

    def descriptor(self) -> np.ndarray:
        if self.goal_descriptor is not None:
            return np.asarray(self.goal_descriptor, dtype=np.float64)
        return class_feature(class_id(self.goal_class))

    def with_preset(self, preset: str) -> "EpisodeSpec":
        try:
            return replace(self, **PRESETS[preset])
        except KeyError:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None

    def validate(self, scene: SceneSpec) -> None:
        if not scene.inside_xy(*self.goal):
            raise ValueError(f"episode {self.episode_id}: goal {self.goal} outside scene bounds")
        if collides(scene, self.start[:2]):
            raise ValueError(f"episode {self.episode_id}: start {self.start[:2]} is not in free space")
        if self.success_radius <= 0 or self.max_steps < 1:
            raise ValueError(f"episode {self.episode_id}: invalid success radius or step budget")


@dataclass
class StepLog:
    step: int
    action: str
    pose: tuple
    waypoints: list = field(default_factory=list)
    chosen: int | None = None
    coverage: list = field(default_factory=list)
    goal_estimate: tuple | None = None
    reason: str = ""

    def as_dict(self) -> dict:
        return {"step": self.step, "action": self.action, "pose": list(self.pose), "waypoints": self.waypoints,
                "chosen": self.chosen, "coverage": self.coverage,
                "goal_estimate": list(self.goal_estimate) if self.goal_estimate else None, "reason": self.reason}


@dataclass
class EpisodeResult:
    episode_id: str
    scene_id: str
    preset: str
    seed: int
    trajectory: list[Pose]
    path_length: float
    shortest_path: float
    stopped: bool
    steps: int
    ne: float
    sr: float
    osr: float
    spl: float
    logs: list[StepLog] = field(default_factory=list)
    cloud: FeatureCloud | None = field(default=None, repr=False)

    def metrics(self) -> dict:
        return {"ne": self.ne, "sr": self.sr, "osr": self.osr, "spl": self.spl}

    def as_dict(self) -> dict:
        return {
            "episode_id": self.episode_id, "scene_id": self.scene_id, "preset": self.preset, "seed": self.seed,
            "stopped": self.stopped, "steps": self.steps, "path_length": self.path_length,
            "shortest_path": self.shortest_path, **self.metrics(),
            "stop_rule": STOP_RULE_NOTE,
            "trajectory": [[p.x, p.y, p.yaw] for p in self.trajectory],
            "logs": [s.as_dict() for s in self.logs],
        }


def inflated_rects(scene: SceneSpec, cfg: Config = DEFAULT) -> np.ndarray:
    r = cfg.sim.agent_radius
    return scene.obstacle_rects(cfg.sim) + np.array([-r, -r, r, r])


def collides(scene: SceneSpec, xy, cfg: Config = DEFAULT) -> bool:
    """Whether the agent disc at ``xy`` touches an obstacle box inflated by
    the agent radius (square corners, so slightly conservative)."""
    x, y = xy
    rects = inflated_rects(scene, cfg)
    inside = (rects[:, 0] <= x) & (x <= rects[:, 2]) & (rects[:, 1] <= y) & (y <= rects[:, 3])
    return bool(inside.any()) or not scene.inside_xy(x, y)


def jittered_start(spec: EpisodeSpec, scene: SceneSpec, seed: int, cfg: Config = DEFAULT) -> Pose:
    x, y, yaw = spec.start
    rng = np.random.default_rng([seed, zlib.crc32(spec.episode_id.encode())])
    dyaw = math.radians(cfg.harness.seed_yaw_jitter_deg) * rng.uniform(-1, 1)
    dx, dy = cfg.harness.seed_pos_jitter * rng.uniform(-1, 1, size=2)
    if not collides(scene, (x + dx, y + dy), cfg):
        x, y = x + dx, y + dy
    return Pose(x, y, scene.floor_height, yaw + dyaw)


def harness_camera(cfg: Config = DEFAULT) -> CameraIntrinsics:
    h = cfg.harness
    return CameraIntrinsics(h.cam_width, h.cam_height, h.hfov, h.vfov, cfg.sim.max_range)


def observed_candidates(feat, depth, pose: Pose, cam: CameraIntrinsics, goal: np.ndarray, cfg: Config,
                        slot: int = 0):
    """Goal candidates from the observed image: per G x G block, the cosine
    of the block's mean feature with the goal and the mean world position of
    its valid pixels."""
    g = cfg.fields.grid
    valid = feat.valid & (depth.data > 0)
    if not valid.any():
        return []
    h, w = valid.shape
    rows = np.minimum(np.arange(h) * g // h, g - 1)
    cols = np.minimum(np.arange(w) * g // w, g - 1)
    block = (rows[:, None] * g + cols[None, :])[valid]
    pts = camera_position(pose, cfg.sim.camera_height) + \
        pixel_directions(cam, pose.yaw, cfg.sim.ray_model)[valid] * depth.data[valid][:, None]
    f = feat.data[valid].astype(np.float64)
    n = np.bincount(block, minlength=g * g).astype(np.float64)
    member = np.zeros((g * g, len(block)))
    member[block, np.arange(len(block))] = 1.0
    fsum = member @ f
    xy = np.stack([np.bincount(block, pts[:, 0], g * g), np.bincount(block, pts[:, 1], g * g)], axis=1)
    out = []
    gn = np.linalg.norm(goal)
    for b in np.nonzero(n)[0]:
        norm = np.linalg.norm(fsum[b])
        if norm > 0 and gn > 0:
            out.append((slot, float(fsum[b] @ goal / (norm * gn)), (float(xy[b, 0] / n[b]), float(xy[b, 1] / n[b]))))
    return out


def rendered_candidates(pano, pose: Pose, cam: CameraIntrinsics, goal: np.ndarray, cfg: Config):
    """Goal candidates from rendered subregions that found a surface."""
    out = []
    origin = camera_position(pose, cfg.sim.camera_height)
    gn = np.linalg.norm(goal)
    for slot, view in enumerate(pano.views):
        if view is None or view.coverage == 0:
            continue
        dirs = subregion_directions(cam, pose.yaw + slot * math.pi / 6, cfg.fields.grid, cfg.sim.ray_model)
        feats = view.region_features
        norms = np.linalg.norm(feats, axis=-1)
        for u, v in zip(*np.nonzero(view.hit & (norms > 0))):
            sim = float(feats[u, v] @ goal / (norms[u, v] * gn))
            p = origin + view.depth[u, v] * dirs[u, v]
            out.append((slot, sim, (float(p[0]), float(p[1]))))
    return out


def line_reach(occupancy_labels: np.ndarray, cells, radius_cells: int = 4, skip_cells: int = 5) -> np.ndarray:
    """Fraction of each straight segment from the crop centre to ``cells``
    that stays clear of occupied cells dilated by ``radius_cells``. The first
    ``skip_cells`` of each segment are not checked, so an agent standing
    close to a wall can still move away from it."""
    blocked = _blocked(occupancy_labels, radius_cells)
    c = occupancy_labels.shape[0] // 2
    out = np.ones(len(cells))
    for n, (i, j) in enumerate(cells):
        length = math.hypot(i - c, j - c)
        steps = max(2, int(2 * length) + 1)
        t = np.linspace(0.0, 1.0, steps)
        ii = np.rint(c + t * (i - c)).astype(int)
        jj = np.rint(c + t * (j - c)).astype(int)
        hit = np.nonzero(blocked[ii, jj] & (t * length > skip_cells))[0]
        if len(hit):
            out[n] = t[max(hit[0] - 1, 0)]
    return out


def stalled_mask(wps, pose: Pose, stalls, radius: float = 0.3, tolerance: float = math.radians(20)) -> np.ndarray:
    """Waypoints whose bearing repeats a move that made no progress from
    (nearly) this position."""
    out = np.zeros(len(wps), dtype=bool)
    for x, y, heading in stalls:
        if math.hypot(pose.x - x, pose.y - y) > radius:
            continue
        for n, w in enumerate(wps):
            bearing = pose.yaw + w.angle
            if abs(math.remainder(bearing - heading, 2 * math.pi)) <= tolerance:
                out[n] = True
    return out


def _move(scene: SceneSpec, pose: Pose, target, cfg: Config, rects: np.ndarray):
    """Turn toward ``target`` and advance in sub-steps until it is reached or
    the next sub-step would collide. Returns the visited poses."""
    x0, y0 = pose.x, pose.y
    dx, dy = target[0] - x0, target[1] - y0
    length = math.hypot(dx, dy)
    if length < 1e-9:
        return []
    yaw = math.atan2(dy, dx)
    ux, uy = dx / length, dy / length
    poses = []
    cur = (x0, y0)
    n = int(math.ceil(length / cfg.harness.substep - 1e-9))
    for i in range(1, n + 1):
        s = min(i * cfg.harness.substep, length)
        nxt = (x0 + s * ux, y0 + s * uy)
        if not scene.inside_xy(*nxt) or any(segment_hits_rect(cur, nxt, r) for r in rects):
            break
        cur = nxt
        poses.append(Pose(cur[0], cur[1], pose.z, yaw))
    if not poses:
        poses.append(Pose(x0, y0, pose.z, yaw))  # turned in place
    return poses


def run_episode(spec: EpisodeSpec, scene: SceneSpec, policy="field_similarity", seed: int = 0,
                cfg: Config = DEFAULT, cloud: FeatureCloud | None = None, preset: str = "",
                dump_dir: str | Path | None = None, dump_maps: bool = False,
                dump_panoramas: bool = False) -> EpisodeResult:
    """Run one episode. ``cloud`` seeds the feature field (memory preset);
    the final cloud is returned on the result."""
    spec.validate(scene)
    choose = get_policy(policy)
    cam = harness_camera(cfg)
    goal_vec = spec.descriptor()
    pose = jittered_start(spec, scene, seed, cfg)
    maps = GlobalMaps.centered_on(pose, cfg.maps)
    if spec.use_fields:
        cloud = cloud if (cloud is not None and spec.use_memory) else FeatureCloud(cfg.fields, cfg.sim)
        step_base = int(cloud.steps.max()) + 1 if len(cloud) else 0
    else:
        cloud, step_base = None, 0
    refiner = RefinerConfig(use_positional_embedding=cfg.harness.use_positional_embedding,
                            refiner_kind=cfg.harness.refiner)
    rects = inflated_rects(scene, cfg)
    dump = Path(dump_dir) if dump_dir is not None else None
    trajectory = [pose]
    logs: list[StepLog] = []
    memory: dict = {}
    stalls: list[tuple[float, float, float]] = []  # (x, y, heading) of moves that went nowhere
    stopped = False
    frame = 0

    def sense(p: Pose):
        nonlocal frame
        depth, sem, feat = observe(scene, p, cam, cfg.sim)
        ground_project(maps, depth, sem, p, cam, cfg.sim, cfg.maps)
        if cloud is not None:
            cloud.insert_view(feat, depth, p, cam, step=step_base + frame)
        frame += 1
        return depth, sem, feat

    # step 1 opens with an in-place rotation seeding maps and fields
    for i in range(12):
        sense(pose.rotated(i * math.pi / 6))
    logs.append(StepLog(0, "bootstrap", (pose.x, pose.y, pose.yaw)))

    step = 1
    while step <= spec.max_steps:
        depth, sem, feat = sense(pose)
        ego = crop_ego(maps, pose, cfg.maps)
        if not spec.use_semantic_map:
            ego = without_semantics(ego)
        if not spec.use_occupancy_map:
            ego = semantic_only_occupancy(ego)
        ego = refine(ego, refiner)
        trav = predict_traversable(ego, "analytic", cfg.traversable)
        wps = extract_waypoints(trav, ego, cfg.harness.waypoint_k, cfg.harness.waypoint_min_dist,
                                cfg.traversable.exclusion_radius, cfg.maps.resolution)
        wp_xy = np.array([ego_to_world(maps, pose, w.cell, cfg.maps.crop) for w in wps]).reshape(-1, 2)

        cands = observed_candidates(feat, depth, pose, cam, goal_vec, cfg)
        if cloud is not None:
            pano = cloud.render_panorama(pose, cam, feat)
            slot_feats, coverage = pano.features, pano.coverage
            cands += rendered_candidates(pano, pose, cam, goal_vec, cfg)
        else:
            pano = None
            slot_feats = np.zeros((12, goal_vec.shape[0]))
            slot_feats[0] = feat.mean_feature()
            coverage = np.zeros(12)
            coverage[0] = 1.0 if feat.valid.any() else 0.0

        visited = np.array([(p.x, p.y) for p in trajectory])
        reach = line_reach(ego.occupancy_labels, [w.cell for w in wps])
        reach[stalled_mask(wps, pose, stalls)] = 0.0
        ctx = Context(pose, wps, wp_xy, slot_feats, cands, goal_vec, visited, memory, cfg.harness, reach)
        decision = choose(ctx)

        stem = f"{preset or 'custom'}_{spec.episode_id}_seed{seed}_step{step:03d}"
        if dump is not None and dump_maps:
            ego.dump(dump / "maps", stem)
            trav.to_pgm(dump / "maps" / f"{stem}_traversable.pgm")
            write_waypoints_csv(dump / "maps" / f"{stem}_waypoints.csv", wps)
        if dump is not None and dump_panoramas and pano is not None:
            (dump / "panoramas").mkdir(parents=True, exist_ok=True)
            pano.to_csv(dump / "panoramas" / f"{stem}.csv")

        entry = StepLog(step, "", (pose.x, pose.y, pose.yaw),
                        [{"sector": w.sector, "distance": round(w.distance, 4), "score": round(w.score, 6),
                          "xy": [round(float(a), 4) for a in xy]} for w, xy in zip(wps, wp_xy)],
                        None, [round(float(c), 4) for c in coverage], decision.goal_estimate, decision.reason)
        logs.append(entry)
        if decision.choice == STOP:
            entry.action = "stop"
            stopped = True
            break
        if decision.choice == NO_WAYPOINT or not wps:
            entry.action = "recover"
            pose = pose.rotated(math.radians(cfg.harness.recovery_turn_deg))
            trajectory.append(pose)
        else:
            entry.action = "move"
            entry.chosen = int(decision.choice)
            moved = _move(scene, pose, wp_xy[decision.choice], cfg, rects)
            if math.hypot(moved[-1].x - pose.x, moved[-1].y - pose.y) < 1e-9:
                stalls.append((pose.x, pose.y, moved[-1].yaw))
            trajectory.extend(moved)
            pose = trajectory[-1]
        step += 1

    traversed = float(sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(trajectory, trajectory[1:])))
    lstar = shortest_path_length(scene, spec.start[:2], spec.goal)
    m = compute_metrics(trajectory, spec.goal, spec.success_radius, stopped, lstar, traversed)
    return EpisodeResult(spec.episode_id, spec.scene_id, preset, seed, trajectory, traversed, lstar, stopped,
                         min(step, spec.max_steps), m.ne, m.sr, m.osr, m.spl, logs, cloud)
