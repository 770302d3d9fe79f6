"""Scene documents: axis-aligned boxes, room labels and the waypoint graph."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..config import DEFAULT, SimConfig
from .classes import CLASS_NAMES, VOID, class_id

MAX_EDGE_LENGTH = 5.0


class SceneError(ValueError):
    """Malformed or invalid scene document."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@dataclass(frozen=True)
class Box:
    min: tuple[float, float, float]
    max: tuple[float, float, float]
    cls: int
    traversable: bool = False
    name: str = ""


@dataclass(frozen=True)
class Room:
    label: str
    min: tuple[float, float]
    max: tuple[float, float]


@dataclass(frozen=True, eq=False)
class SceneSpec:
    name: str
    bounds_min: tuple[float, float, float]
    bounds_max: tuple[float, float, float]
    floor_height: float
    boxes: tuple[Box, ...]
    rooms: tuple[Room, ...]
    nav_nodes: np.ndarray
    nav_edges: tuple[tuple[int, int], ...]
    box_min: np.ndarray = field(repr=False)
    box_max: np.ndarray = field(repr=False)
    box_class: np.ndarray = field(repr=False)
    box_traversable: np.ndarray = field(repr=False)

    @property
    def room_labels(self) -> list[str]:
        return sorted({r.label for r in self.rooms})

    def obstacle_mask(self, sim: SimConfig = DEFAULT.sim) -> np.ndarray:
        """Boxes that block the agent body: solid and overlapping the body band."""
        lo = self.floor_height + sim.body_low
        hi = self.floor_height + sim.body_high
        return (~self.box_traversable) & (self.box_max[:, 2] > lo) & (self.box_min[:, 2] < hi)

    def obstacle_rects(self, sim: SimConfig = DEFAULT.sim) -> np.ndarray:
        """2D footprints ``(n, 4)`` as ``xmin, ymin, xmax, ymax``."""
        m = self.obstacle_mask(sim)
        return np.concatenate([self.box_min[m, :2], self.box_max[m, :2]], axis=1)

    def inside_xy(self, x: float, y: float) -> bool:
        return (self.bounds_min[0] <= x <= self.bounds_max[0]
                and self.bounds_min[1] <= y <= self.bounds_max[1])

    def room_at(self, x: float, y: float) -> str | None:
        for r in self.rooms:
            if r.min[0] <= x <= r.max[0] and r.min[1] <= y <= r.max[1]:
                return r.label
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": {"min": list(self.bounds_min), "max": list(self.bounds_max)},
            "floor_height": self.floor_height,
            "rooms": [{"label": r.label, "min": list(r.min), "max": list(r.max)} for r in self.rooms],
            "boxes": [
                {"name": b.name, "min": list(b.min), "max": list(b.max),
                 "class": CLASS_NAMES[b.cls], "traversable": b.traversable}
                for b in self.boxes
            ],
            "nav_nodes": [[float(x), float(y)] for x, y in self.nav_nodes],
            "nav_edges": [list(e) for e in self.nav_edges],
        }

    def dumps(self) -> str:
        return dump_scene_dict(self.to_dict())


def dump_scene_dict(doc: dict) -> str:
    return json.dumps(doc, indent=1) + "\n"


def rect_distance(px: float, py: float, rect) -> float:
    """Distance from a point to an axis-aligned rectangle (0 inside)."""
    dx = max(rect[0] - px, 0.0, px - rect[2])
    dy = max(rect[1] - py, 0.0, py - rect[3])
    return math.hypot(dx, dy)


def segment_hits_rect(p, q, rect) -> bool:
    """Liang-Barsky clip of segment ``p -> q`` against a rectangle."""
    t0, t1 = 0.0, 1.0
    d = (q[0] - p[0], q[1] - p[1])
    for a in range(2):
        lo, hi = rect[a], rect[a + 2]
        if abs(d[a]) < 1e-12:
            if p[a] < lo or p[a] > hi:
                return False
            continue
        u0, u1 = (lo - p[a]) / d[a], (hi - p[a]) / d[a]
        if u0 > u1:
            u0, u1 = u1, u0
        t0, t1 = max(t0, u0), min(t1, u1)
        if t0 > t1:
            return False
    return True


def _vec(value, n: int, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SceneError(f"expected a list of {n} numbers", field=where)
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise SceneError(f"expected a list of {n} numbers", field=where) from None
    if not all(math.isfinite(v) for v in out):
        raise SceneError("non-finite coordinate", field=where)
    return out


def _require(doc: dict, key: str, where: str = ""):
    if key not in doc:
        raise SceneError("missing field", field=f"{where}{key}")
    return doc[key]


def parse_scene(doc: dict, sim: SimConfig = DEFAULT.sim) -> SceneSpec:
    """Validate a decoded scene document."""
    if not isinstance(doc, dict):
        raise SceneError("scene document must be an object")
    bounds = _require(doc, "bounds")
    if not isinstance(bounds, dict):
        raise SceneError("expected an object with min/max", field="bounds")
    bmin = _vec(_require(bounds, "min", "bounds."), 3, "bounds.min")
    bmax = _vec(_require(bounds, "max", "bounds."), 3, "bounds.max")
    if any(lo >= hi for lo, hi in zip(bmin, bmax)):
        raise SceneError("min must be below max on every axis", field="bounds")
    floor = float(doc.get("floor_height", 0.0))

    boxes = []
    for i, b in enumerate(doc.get("boxes", [])):
        where = f"boxes[{i}]"
        if not isinstance(b, dict):
            raise SceneError("expected an object", field=where)
        lo = _vec(_require(b, "min", where + "."), 3, where + ".min")
        hi = _vec(_require(b, "max", where + "."), 3, where + ".max")
        name = str(b.get("name", f"box{i}"))
        if any(a >= c for a, c in zip(lo, hi)):
            raise SceneError(f"box {name!r} has empty extent", field=where)
        if any(a < m - 1e-9 for a, m in zip(lo, bmin)) or any(c > m + 1e-9 for c, m in zip(hi, bmax)):
            raise SceneError(f"box {name!r} lies outside the scene bounds", field=where)
        try:
            cid = class_id(_require(b, "class", where + "."))
        except ValueError as e:
            raise SceneError(str(e), field=where + ".class") from None
        if cid == VOID:
            raise SceneError(f"box {name!r} uses the void class", field=where + ".class")
        trav = b.get("traversable", False)
        if not isinstance(trav, bool):
            raise SceneError("expected true/false", field=where + ".traversable")
        boxes.append(Box(lo, hi, cid, trav, name))

    rooms = []
    for i, r in enumerate(doc.get("rooms", [])):
        where = f"rooms[{i}]"
        rooms.append(Room(str(_require(r, "label", where + ".")),
                          _vec(_require(r, "min", where + "."), 2, where + ".min"),
                          _vec(_require(r, "max", where + "."), 2, where + ".max")))

    nodes = np.array([_vec(p, 2, f"nav_nodes[{i}]") for i, p in enumerate(doc.get("nav_nodes", []))],
                     dtype=float).reshape(-1, 2)
    box_min = np.array([b.min for b in boxes], dtype=float).reshape(-1, 3)
    box_max = np.array([b.max for b in boxes], dtype=float).reshape(-1, 3)
    box_class = np.array([b.cls for b in boxes], dtype=np.int32)
    box_trav = np.array([b.traversable for b in boxes], dtype=bool)
    for arr in (nodes, box_min, box_max, box_class, box_trav):
        arr.setflags(write=False)

    edges = []
    for i, e in enumerate(doc.get("nav_edges", [])):
        where = f"nav_edges[{i}]"
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise SceneError("expected a pair of node indices", field=where)
        a, b = int(e[0]), int(e[1])
        if not (0 <= a < len(nodes) and 0 <= b < len(nodes)) or a == b:
            raise SceneError(f"edge ({a}, {b}) references invalid nodes", field=where)
        edges.append((a, b))

    scene = SceneSpec(str(doc.get("name", "scene")), bmin, bmax, floor, tuple(boxes), tuple(rooms),
                      nodes, tuple(edges), box_min, box_max, box_class, box_trav)
    _check_graph(scene, sim)
    return scene


def _check_graph(scene: SceneSpec, sim: SimConfig) -> None:
    rects = scene.obstacle_rects(sim)
    r = sim.agent_radius
    for i, (x, y) in enumerate(scene.nav_nodes):
        if not scene.inside_xy(x, y):
            raise SceneError(f"nav node {i} at ({x:.2f}, {y:.2f}) lies outside the bounds", field=f"nav_nodes[{i}]")
        for j, rect in enumerate(rects):
            if rect_distance(x, y, rect) < r:
                raise SceneError(f"nav node in occupied space: node {i} at ({x:.2f}, {y:.2f}) "
                                 f"overlaps an obstacle box", field=f"nav_nodes[{i}]")
    inflated = rects + np.array([-r, -r, r, r])
    for k, (a, b) in enumerate(scene.nav_edges):
        p, q = scene.nav_nodes[a], scene.nav_nodes[b]
        if np.hypot(*(q - p)) > MAX_EDGE_LENGTH + 1e-9:
            raise SceneError(f"edge ({a}, {b}) longer than {MAX_EDGE_LENGTH} m", field=f"nav_edges[{k}]")
        if any(segment_hits_rect(p, q, rect) for rect in inflated):
            raise SceneError(f"edge ({a}, {b}) is obstructed", field=f"nav_edges[{k}]")


def load_scene(text: str, sim: SimConfig = DEFAULT.sim) -> SceneSpec:
    """Parse and validate a scene document (JSON text)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneError(e.msg, line=e.lineno) from None
    return parse_scene(doc, sim)


def empty_room(size: float = 8.0, height: float = 2.5, thickness: float = 0.1) -> dict:
    """Scene document for a bare square room centred on the origin."""
    h = size / 2.0
    t = thickness
    walls = [
        ([-h - t, -h - t, 0.0], [h + t, -h, height]),
        ([-h - t, h, 0.0], [h + t, h + t, height]),
        ([-h - t, -h, 0.0], [-h, h, height]),
        ([h, -h, 0.0], [h + t, h, height]),
    ]
    return {
        "name": "empty_room",
        "bounds": {"min": [-h - t, -h - t, -0.1], "max": [h + t, h + t, height + 0.1]},
        "floor_height": 0.0,
        "rooms": [{"label": "living room", "min": [-h, -h], "max": [h, h]}],
        "boxes": [{"name": f"wall{i}", "min": lo, "max": hi, "class": "wall", "traversable": False}
                  for i, (lo, hi) in enumerate(walls)],
        "nav_nodes": [[0.0, 0.0]],
        "nav_edges": [],
    }


def scene_with_boxes(boxes, rotate_quarters: int = 0, name: str = "synthetic") -> SceneSpec:
    """Build a scene from ``(min, max, class)`` triples, optionally rotated by
    multiples of 90 degrees about the origin (boxes stay axis-aligned)."""
    out = []
    for lo, hi, cls in boxes:
        corners = np.array([lo, hi], dtype=float)
        for _ in range(rotate_quarters % 4):
            corners = np.stack([-corners[:, 1], corners[:, 0], corners[:, 2]], axis=1)
        out.append({"min": corners.min(0).tolist(), "max": corners.max(0).tolist(), "class": class_id(cls)})
    pts = np.array([b["min"] for b in out] + [b["max"] for b in out] + [[-1, -1, -1], [1, 1, 1]], float)
    pad = 1.0
    return parse_scene({
        "name": name,
        "bounds": {"min": (pts.min(0) - pad).tolist(), "max": (pts.max(0) + pad).tolist()},
        "boxes": out,
    })

