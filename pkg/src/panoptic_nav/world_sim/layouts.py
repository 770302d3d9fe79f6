"""Procedural house templates (``layout_A`` .. ``layout_E``) and the
builder used by the test fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import DEFAULT, SimConfig
from .scene import SceneSpec, dump_scene_dict, parse_scene, rect_distance, segment_hits_rect

GRID = 0.05
DOOR_WIDTH = 0.9
ROOM_TYPES = ("living room", "kitchen", "bathroom", "bedroom")


def snap(v: float) -> float:
    return round(round(v / GRID) * GRID, 3)


@dataclass
class SceneBuilder:
    name: str
    width: float
    depth: float
    height: float = 2.5
    wall: float = 0.1
    boxes: list = field(default_factory=list)
    rooms: list = field(default_factory=list)
    doors: list = field(default_factory=list)  # door centre points on the wall line
    extra_nodes: list = field(default_factory=list)

    def __post_init__(self):
        w, d, t, h = self.width, self.depth, self.wall, self.height
        self.box("floor", (-t, -t, -0.05), (w + t, d + t, 0.0), "floor")
        self.box("ceiling", (-t, -t, h), (w + t, d + t, h + 0.1), "ceiling")
        self.box("wall.south", (-t, -t, 0.0), (w + t, 0.0, h), "wall")
        self.box("wall.north", (-t, d, 0.0), (w + t, d + t, h), "wall")
        self.box("wall.west", (-t, 0.0, 0.0), (0.0, d, h), "wall")
        self.box("wall.east", (w, 0.0, 0.0), (w + t, d, h), "wall")

    def box(self, name, lo, hi, cls, traversable=False):
        self.boxes.append({"name": name, "min": [snap(lo[0]), snap(lo[1]), round(lo[2], 3)],
                           "max": [snap(hi[0]), snap(hi[1]), round(hi[2], 3)],
                           "class": cls, "traversable": traversable})

    def room(self, label, x0, y0, x1, y1):
        self.rooms.append({"label": label, "min": [x0, y0], "max": [x1, y1]})

    def partition(self, axis: str, at: float, start: float, stop: float, doors=(),
                  door_width: float = DOOR_WIDTH, landmark: str = "door"):
        """Interior wall on the line ``axis = at`` from ``start`` to ``stop``
        with door gaps centred at ``doors``; each gap gets a lintel and a
        walkable threshold slab carrying the ``landmark`` class."""
        t = self.wall / 2.0
        cuts = sorted((c - door_width / 2.0, c + door_width / 2.0) for c in doors)
        spans, cur = [], start
        for a, b in cuts:
            spans.append((cur, a))
            cur = b
        spans.append((cur, stop))

        def rect(lo_along, hi_along, across_lo, across_hi, z0, z1):
            if axis == "x":
                return (across_lo, lo_along, z0), (across_hi, hi_along, z1)
            return (lo_along, across_lo, z0), (hi_along, across_hi, z1)

        for i, (a, b) in enumerate(spans):
            if b - a > 1e-6:
                self.box(f"wall.{axis}{at:g}.{i}", *rect(a, b, at - t, at + t, 0.0, self.height), "wall")
        for j, (a, b) in enumerate(cuts):
            self.box(f"lintel.{axis}{at:g}.{j}", *rect(a, b, at - t, at + t, 2.1, self.height), "wall")
            self.box(f"{landmark}.{axis}{at:g}.{j}", *rect(a, b, at - 0.3, at + 0.3, 0.0, 0.02),
                     landmark, traversable=True)
            c = (a + b) / 2.0
            self.doors.append((at, c) if axis == "x" else (c, at))

    def obstacle_rects(self, sim: SimConfig = DEFAULT.sim) -> np.ndarray:
        out = []
        for b in self.boxes:
            if b["traversable"]:
                continue
            if b["max"][2] > sim.body_low and b["min"][2] < sim.body_high:
                out.append(b["min"][:2] + b["max"][:2])
        return np.array(out, dtype=float).reshape(-1, 4)

    def place(self, rng: np.random.Generator, room: dict, name: str, cls: str, size, *,
              against_wall: bool = True, z0: float = 0.0, clearance: float = 0.6,
              tries: int = 400) -> bool:
        """Drop a box into ``room`` without blocking doors or other furniture."""
        (rx0, ry0), (rx1, ry1) = room["min"], room["max"]
        m = self.wall / 2.0 + 0.05
        others = [(*b["min"][:2], *b["max"][:2]) for b in self.boxes
                  if not b["traversable"] and b["name"].startswith(("furn.",))]
        for _ in range(tries):
            sx, sy = size[:2] if rng.random() < 0.5 else size[1::-1]
            if against_wall:
                side = rng.integers(4)
                if side == 0:
                    x, y = rng.uniform(rx0 + m, rx1 - m - sx), ry0 + m
                elif side == 1:
                    x, y = rng.uniform(rx0 + m, rx1 - m - sx), ry1 - m - sy
                elif side == 2:
                    x, y = rx0 + m, rng.uniform(ry0 + m, ry1 - m - sy)
                else:
                    x, y = rx1 - m - sx, rng.uniform(ry0 + m, ry1 - m - sy)
            else:
                x = rng.uniform(rx0 + m + 0.8, rx1 - m - sx - 0.8)
                y = rng.uniform(ry0 + m + 0.8, ry1 - m - sy - 0.8)
            if not (math.isfinite(x) and math.isfinite(y)):
                continue
            x, y = snap(x), snap(y)
            rect = (x, y, x + sx, y + sy)
            if rect[0] < rx0 + m - 1e-9 or rect[2] > rx1 - m + 1e-9 or rect[1] < ry0 + m - 1e-9 or rect[3] > ry1 - m + 1e-9:
                continue
            grown = (rect[0] - clearance, rect[1] - clearance, rect[2] + clearance, rect[3] + clearance)
            if any(not (o[2] <= grown[0] or o[0] >= grown[2] or o[3] <= grown[1] or o[1] >= grown[3]) for o in others):
                continue
            if any(rect_distance(dx, dy, rect) < 1.1 for dx, dy in self.doors):
                continue
            self.box(f"furn.{name}", (x, y, z0), (x + sx, y + sy, z0 + size[2]), cls)
            return True
        return False

    def nav_graph(self, spacing: float = 0.75, max_edge: float = 2.2, sim: SimConfig = DEFAULT.sim):
        rects = self.obstacle_rects(sim)
        margin = sim.agent_radius + 0.12
        nodes = []
        for r in self.rooms:
            (x0, y0), (x1, y1) = r["min"], r["max"]
            xs = np.arange(x0 + 0.4, x1 - 0.3 + 1e-9, spacing)
            ys = np.arange(y0 + 0.4, y1 - 0.3 + 1e-9, spacing)
            for x in xs:
                for y in ys:
                    nodes.append((snap(x), snap(y)))
        nodes += [(snap(x), snap(y)) for x, y in self.doors] + list(self.extra_nodes)
        keep = []
        for p in nodes:
            if all(rect_distance(p[0], p[1], rc) >= margin for rc in rects) and p not in keep:
                keep.append(p)
        inflated = rects + np.array([-sim.agent_radius, -sim.agent_radius, sim.agent_radius, sim.agent_radius])
        edges = []
        for i in range(len(keep)):
            for j in range(i + 1, len(keep)):
                p, q = keep[i], keep[j]
                if math.dist(p, q) <= max_edge and not any(segment_hits_rect(p, q, rc) for rc in inflated):
                    edges.append([i, j])
        return _largest_component(keep, edges)

    def to_dict(self, sim: SimConfig = DEFAULT.sim) -> dict:
        nodes, edges = self.nav_graph(sim=sim)
        t = self.wall
        return {
            "name": self.name,
            "bounds": {"min": [-t, -t, -0.1], "max": [snap(self.width + t), snap(self.depth + t), self.height + 0.15]},
            "floor_height": 0.0,
            "rooms": self.rooms,
            "boxes": self.boxes,
            "nav_nodes": nodes,
            "nav_edges": edges,
        }

    def build(self, sim: SimConfig = DEFAULT.sim) -> SceneSpec:
        return parse_scene(self.to_dict(sim), sim)


def _largest_component(nodes, edges):
    parent = list(range(len(nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    roots = [find(i) for i in range(len(nodes))]
    if not roots:
        return [], []
    best = max(set(roots), key=lambda r: (roots.count(r), -roots.index(r)))
    remap, kept = {}, []
    for i, p in enumerate(nodes):
        if roots[i] == best:
            remap[i] = len(kept)
            kept.append(list(p))
    return kept, [[remap[a], remap[b]] for a, b in edges if a in remap and b in remap]


# furniture per room type: (name, class, (sx, sy, sz), against_wall)
FURNITURE = {
    "living room": [("sofa", "sofa", (2.0, 0.9, 0.8), True),
                    ("tv_stand", "cabinet", (1.4, 0.45, 0.6), True),
                    ("coffee_table", "table", (1.1, 0.6, 0.45), False),
                    ("plant", "plant", (0.45, 0.45, 1.1), True)],
    "kitchen": [("counter", "counter", (2.4, 0.6, 0.9), True),
                ("fridge", "cabinet", (0.7, 0.7, 1.9), True),
                ("dining_table", "table", (1.2, 0.8, 0.75), False)],
    "bathroom": [("bathtub", "bathtub", (1.7, 0.75, 0.55), True),
                 ("toilet", "toilet", (0.45, 0.7, 0.75), True),
                 ("sink", "sink", (0.6, 0.45, 0.85), True)],
    "bedroom": [("bed", "bed", (2.0, 1.6, 0.6), True),
                ("wardrobe", "chest_of_drawers", (1.2, 0.55, 1.9), True),
                ("nightstand", "cabinet", (0.45, 0.45, 0.55), True)],
    "hallway": [("hall_plant", "plant", (0.4, 0.4, 1.0), True)],
}

# (width, depth, rooms, partitions) per template
TEMPLATES = {
    "layout_A": (11.0, 9.0,
                 [("living room", 0, 0, 6, 4.5), ("kitchen", 6, 0, 11, 4.5), ("hallway", 0, 4.5, 11, 5.5),
                  ("bedroom", 0, 5.5, 6.5, 9), ("bathroom", 6.5, 5.5, 11, 9)],
                 [("y", 4.5, 0, 11, (2.5, 8.5)), ("x", 6.0, 0, 4.5, (2.2,)),
                  ("y", 5.5, 0, 11, (3.2, 9.5)), ("x", 6.5, 5.5, 9, ())]),
    "layout_B": (10.0, 10.0,
                 [("living room", 0, 0, 10, 5), ("kitchen", 0, 5, 4, 10), ("bathroom", 4, 5, 6.5, 10),
                  ("bedroom", 6.5, 5, 10, 10)],
                 [("y", 5.0, 0, 10, (2.0, 5.25, 8.25)), ("x", 4.0, 5, 10, ()), ("x", 6.5, 5, 10, ())]),
    "layout_C": (12.0, 8.0,
                 [("kitchen", 0, 0, 4, 8), ("living room", 4, 0, 9, 8), ("bedroom", 9, 0, 12, 5),
                  ("bathroom", 9, 5, 12, 8)],
                 [("x", 4.0, 0, 8, (2.0, 6.0)), ("x", 9.0, 0, 8, (2.5, 6.5)), ("y", 5.0, 9, 12, ())]),
    "layout_D": (9.0, 11.0,
                 [("bedroom", 0, 0, 4.5, 4.5), ("bathroom", 4.5, 0, 9, 4.5), ("living room", 0, 4.5, 9, 8),
                  ("kitchen", 0, 8, 9, 11)],
                 [("y", 4.5, 0, 9, (2.2, 6.7)), ("x", 4.5, 0, 4.5, ()), ("y", 8.0, 0, 9, (2.0, 7.0))]),
    "layout_E": (12.0, 10.0,
                 [("living room", 0, 0, 7, 6), ("bedroom", 0, 6, 7, 10), ("kitchen", 7, 0, 12, 5),
                  ("bathroom", 7, 5, 12, 10)],
                 [("y", 6.0, 0, 7, (3.5,)), ("x", 7.0, 0, 10, (2.5, 7.5)), ("y", 5.0, 7, 12, (9.5,))]),
}


def template_names() -> list[str]:
    return sorted(TEMPLATES)


def build_template(template: str, seed: int = 0) -> SceneBuilder:
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {', '.join(template_names())}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    width, depth, rooms, partitions = TEMPLATES[template]
    b = SceneBuilder(template, width, depth)
    for label, *rect in rooms:
        b.room(label, *map(float, rect))
    for axis, at, start, stop, doors in partitions:
        b.partition(axis, float(at), float(start), float(stop), tuple(float(d) for d in doors))
    rng = np.random.default_rng([sorted(TEMPLATES).index(template), seed])
    for room in b.rooms:
        for name, cls, size, wall in FURNITURE.get(room["label"], []):
            b.place(rng, room, f"{room['label'].replace(' ', '_')}.{name}", cls, size, against_wall=wall)
    return b


def generate_scene_text(template: str, seed: int = 0) -> str:
    """Deterministic scene document for a template."""
    return dump_scene_dict(build_template(template, seed).to_dict())


def generate_scene(template: str, seed: int = 0) -> SceneSpec:
    return build_template(template, seed).build()
