"""Navigation metrics (NE, SR, OSR, SPL) and nav-graph shortest paths."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    ne: float
    sr: float
    osr: float
    spl: float

    def as_dict(self) -> dict:
        return {"ne": self.ne, "sr": self.sr, "osr": self.osr, "spl": self.spl}


def path_length(points) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        return 0.0
    return float(np.sqrt(((p[1:] - p[:-1]) ** 2).sum(axis=1)).sum())


def compute_metrics(trajectory, goal, success_radius: float, stopped: bool,
                    shortest_path_len: float, traversed: float | None = None) -> Metrics:
    """Metrics for one episode; ``trajectory`` holds ``(x, y)`` positions
    (or poses with ``x``/``y``). ``traversed`` defaults to the polyline length."""
    pts = np.array([(p.x, p.y) if hasattr(p, "x") else tuple(p)[:2] for p in trajectory], dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("trajectory is empty")
    g = np.asarray(goal, dtype=np.float64)[:2]
    dist = np.sqrt(((pts - g) ** 2).sum(axis=1))
    ne = float(dist[-1])
    sr = 1.0 if stopped and ne <= success_radius else 0.0
    osr = 1.0 if (dist <= success_radius).any() else 0.0
    length = path_length(pts) if traversed is None else float(traversed)
    if shortest_path_len <= 0:
        if length > 0:
            log.info("non-positive shortest path with a moving trajectory: spl set to sr")
        spl = sr
    else:
        spl = sr * shortest_path_len / max(shortest_path_len, length)
    return Metrics(ne, sr, osr, spl)


def nav_distances(scene, source: int) -> np.ndarray:
    """Graph distances from node ``source`` to every nav node (inf if unreachable)."""
    nodes = np.asarray(scene.nav_nodes, dtype=np.float64)
    n = len(nodes)
    e = np.asarray(scene.nav_edges, dtype=np.int64).reshape(-1, 2)
    w = np.sqrt(((nodes[e[:, 0]] - nodes[e[:, 1]]) ** 2).sum(axis=1))
    graph = coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    return dijkstra(graph, directed=False, indices=source)


def nearest_node(scene, xy) -> int:
    nodes = np.asarray(scene.nav_nodes, dtype=np.float64)
    if len(nodes) == 0:
        raise ValueError("scene has no nav nodes")
    d = ((nodes - np.asarray(xy, dtype=np.float64)[:2]) ** 2).sum(axis=1)
    return int(np.argmin(d))


def shortest_path_length(scene, start, goal) -> float:
    """Start to nearest node, graph path, nearest node to goal."""
    s, g = nearest_node(scene, start), nearest_node(scene, goal)
    nodes = np.asarray(scene.nav_nodes, dtype=np.float64)
    graph = float(nav_distances(scene, s)[g])
    if not math.isfinite(graph):
        raise ValueError("goal is not reachable on the nav graph")
    return (math.dist(start[:2], nodes[s]) + graph + math.dist(nodes[g], goal[:2]))
