"""Bundled scenes and episode suites.

Fixture scenes are built with the same :class:`SceneBuilder` as the house
templates, so they get walls, ceilings, door landmarks and a nav graph.
"""

from __future__ import annotations

import math

import numpy as np

from ..config import DEFAULT, Config, SimConfig
from ..world_sim import CameraIntrinsics, Pose, class_feature, observe
from ..world_sim.classes import class_id
from .episode import harness_camera, observed_candidates
from ..world_sim.layouts import SceneBuilder, build_template, template_names
from ..world_sim.scene import SceneSpec, parse_scene
from .metrics import nearest_node

# classes that appear at most once per template, usable as goals
GOAL_CLASSES = ("sofa", "bed", "toilet", "bathtub", "counter", "chest_of_drawers", "sink")


def _center(box: dict) -> tuple[float, float]:
    return ((box["min"][0] + box["max"][0]) / 2.0, (box["min"][1] + box["max"][1]) / 2.0)


def behind_agent_builder() -> SceneBuilder:
    """Long corridor with the target at one end and the start facing away."""
    b = SceneBuilder("behind_agent", 24.0, 3.0)
    b.room("hallway", 0.0, 0.0, 24.0, 3.0)
    b.box("furn.target", (0.05, 0.6, 0.0), (0.45, 2.4, 1.6), "tv_monitor")
    for i, x in enumerate((6.0, 12.0, 18.0)):
        b.box(f"furn.picture{i}", (x, 2.9, 1.0), (x + 0.8, 3.0, 1.6), "picture")
    return b


def door_stairs_builder(variant: int) -> SceneBuilder:
    """Two rooms joined by a single gap marked as a door or a stair landing;
    the target sits in the far room, out of the start's line of sight."""
    landmark = "door" if variant % 2 == 0 else "stairs"
    w, d = 10.0, 7.0
    b = SceneBuilder(f"door_stairs_{variant}", w, d)
    split = 5.0
    b.room("living room", 0.0, 0.0, split, d)
    b.room("bedroom", split, 0.0, w, d)
    gap = (1.5, 3.5, 5.5)[variant % 3]
    b.partition("x", split, 0.0, d, (gap,), landmark=landmark)
    ty = d - 1.0 - gap * 0.6 if gap > 3.0 else d - 1.3
    b.box("furn.target", (w - 0.7, ty - 0.6, 0.0), (w - 0.05, ty + 0.6, 1.1), "bed")
    b.box("furn.sofa", (0.1, 0.2, 0.0), (1.0, 2.0, 0.8), "sofa")
    return b


def clutter_builder(variant: int) -> SceneBuilder:
    """One room strewn with low furniture between start and target."""
    w, d = 11.0, 8.0
    b = SceneBuilder(f"clutter_{variant}", w, d)
    b.room("living room", 0.0, 0.0, w, d)
    rng = np.random.default_rng([7, variant])
    placed = 0
    while placed < 9:
        x = float(rng.uniform(2.5, 8.0))
        y = float(rng.uniform(0.8, d - 1.5))
        cls = ("chair", "stool", "table", "cushion")[placed % 4]
        size = (0.5, 0.5, 0.5) if cls != "table" else (0.9, 0.7, 0.75)
        rect = (x, y, x + size[0], y + size[1])
        others = [bx for bx in b.boxes if bx["name"].startswith("furn.")]
        if any(not (o["max"][0] + 0.8 <= rect[0] or o["min"][0] - 0.8 >= rect[2]
                    or o["max"][1] + 0.8 <= rect[1] or o["min"][1] - 0.8 >= rect[3]) for o in others):
            continue
        b.box(f"furn.clutter{placed}", (x, y, 0.0), (x + size[0], y + size[1], size[2]), cls)
        placed += 1
    b.box("furn.target", (w - 0.6, 3.0, 0.0), (w - 0.05, 5.0, 0.9), "counter")
    return b


FIXTURES = {
    "behind_agent": behind_agent_builder,
    **{f"door_stairs_{i}": (lambda i=i: door_stairs_builder(i)) for i in range(4)},
    **{f"clutter_{i}": (lambda i=i: clutter_builder(i)) for i in range(4)},
}


def fixture_names() -> list[str]:
    return sorted(FIXTURES)


def fixture_document(name: str, sim: SimConfig = DEFAULT.sim) -> dict:
    try:
        return FIXTURES[name]().to_dict(sim)
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {', '.join(fixture_names())}") from None


def fixture_scene(name: str, sim: SimConfig = DEFAULT.sim) -> SceneSpec:
    return parse_scene(fixture_document(name, sim), sim)


def _goal_box(doc: dict, cls: str) -> dict:
    boxes = [b for b in doc["boxes"] if b["class"] == cls and not b["traversable"]]
    if len(boxes) != 1:
        raise ValueError(f"goal class {cls!r} must appear exactly once, found {len(boxes)}")
    return boxes[0]


def _episode(episode_id: str, scene_id: str, scene: SceneSpec, start_xy, yaw: float, goal_cls: str,
             doc: dict, max_steps: int) -> dict:
    goal = scene.nav_nodes[nearest_node(scene, _center(_goal_box(doc, goal_cls)))]
    return {"id": episode_id, "scene": scene_id, "start": [round(float(start_xy[0]), 3),
                                                           round(float(start_xy[1]), 3), round(yaw, 6)],
            "goal": [float(goal[0]), float(goal[1])], "goal_class": goal_cls, "max_steps": max_steps}


def _recognition(scene: SceneSpec, xy, yaw: float, goal: np.ndarray, cam: CameraIntrinsics, cfg: Config) -> float:
    """Best block similarity to ``goal`` in the view from ``xy`` at ``yaw``."""
    pose = Pose(float(xy[0]), float(xy[1]), scene.floor_height, yaw)
    depth, _, feat = observe(scene, pose, cam, cfg.sim)
    return max((c[1] for c in observed_candidates(feat, depth, pose, cam, goal, cfg)), default=0.0)


def main_suite_document(per_scene: int = 4, max_steps: int = 6, cfg: Config = DEFAULT) -> dict:
    """Twenty episodes over the five house templates. Goals are objects of a
    class unique in the scene; each start lies 4.5-8 m from the goal with the
    object recognizable in some direction around the agent but not in its
    initial view."""
    sim = cfg.sim
    cam = harness_camera(cfg)
    scenes, episodes = {}, []
    for t_idx, template in enumerate(template_names()):
        scene_id = f"{template}_s0"
        scenes[scene_id] = {"template": template, "seed": 0}
        doc = build_template(template, 0).to_dict(sim)
        scene = parse_scene(doc, sim)
        rng = np.random.default_rng([1234, t_idx])
        goals = [c for c in GOAL_CLASSES
                 if sum(b["class"] == c and not b["traversable"] for b in doc["boxes"]) == 1]
        made = 0
        for cls in (goals[i] for i in rng.permutation(len(goals))):
            if made == per_scene:
                break
            feat = class_feature(class_id(cls))
            gxy = _center(_goal_box(doc, cls))
            goal = scene.nav_nodes[nearest_node(scene, gxy)]
            pool = [p for p in scene.nav_nodes if 4.5 <= math.dist(p, goal) <= 8.0]
            for n in rng.permutation(len(pool)):
                s = pool[n]
                away = math.atan2(s[1] - gxy[1], s[0] - gxy[0])
                yaw = away + float(rng.uniform(-math.pi / 4, math.pi / 4))
                around = max(_recognition(scene, s, yaw + k * math.pi / 6, feat, cam, cfg) for k in range(1, 12))
                if around > 0.9 and _recognition(scene, s, yaw, feat, cam, cfg) < 0.5:
                    episodes.append(_episode(f"{scene_id}_ep{made}", scene_id, scene, s, yaw, cls, doc, max_steps))
                    made += 1
                    break
        if made < per_scene:
            raise RuntimeError(f"{template}: only {made} episodes satisfy the start constraints")
    return {"name": "main", "scenes": scenes, "episodes": episodes}


def behind_agent_document(max_steps: int = 6, cfg: Config = DEFAULT) -> dict:
    sim = cfg.sim
    doc = fixture_document("behind_agent", sim)
    scene = parse_scene(doc, sim)
    ep = _episode("behind_agent_ep0", "behind_agent", scene, (7.0, 1.5), 0.0, "tv_monitor", doc, max_steps)
    return {"name": "behind_agent", "scenes": {"behind_agent": {"fixture": "behind_agent"}}, "episodes": [ep]}


def door_stairs_document(max_steps: int = 12, cfg: Config = DEFAULT) -> dict:
    sim = cfg.sim
    scenes, episodes = {}, []
    for i in range(4):
        name = f"door_stairs_{i}"
        doc = fixture_document(name, sim)
        scene = parse_scene(doc, sim)
        scenes[name] = {"fixture": name}
        start = scene.nav_nodes[nearest_node(scene, (1.5, 5.5 if i % 2 == 0 else 1.5))]
        episodes.append(_episode(f"{name}_ep0", name, scene, start, math.pi / 2 if i % 2 == 0 else -math.pi / 2,
                                 "bed", doc, max_steps))
    return {"name": "door_stairs", "scenes": scenes, "episodes": episodes}


def clutter_document(max_steps: int = 12, cfg: Config = DEFAULT) -> dict:
    sim = cfg.sim
    scenes, episodes = {}, []
    for i in range(4):
        name = f"clutter_{i}"
        doc = fixture_document(name, sim)
        scene = parse_scene(doc, sim)
        scenes[name] = {"fixture": name}
        start = scene.nav_nodes[nearest_node(scene, (1.0, 1.0 + 2.0 * i))]
        episodes.append(_episode(f"{name}_ep0", name, scene, start, math.pi, "counter", doc, max_steps))
    return {"name": "clutter", "scenes": scenes, "episodes": episodes}


SUITES = {
    "main": main_suite_document,
    "behind_agent": behind_agent_document,
    "door_stairs": door_stairs_document,
    "clutter": clutter_document,
}
