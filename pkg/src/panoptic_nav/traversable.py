"""Agent-centric traversable maps: Gaussian-mixture targets from graph
waypoints, an analytic predictor, and 12-sector waypoint extraction."""

from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from .config import DEFAULT, TraversableConfig
from .io import unit_to_pgm, write_pgm
from .mapping import FREE, OCCUPIED, VOID, EgoMaps
from .world_sim.classes import LANDMARKS

log = logging.getLogger(__name__)

N_SECTORS = 12
SECTOR_SPAN = 2 * math.pi / N_SECTORS
RESOLUTION = DEFAULT.maps.resolution


@dataclass(frozen=True, eq=False)
class TraversableMap:
    values: np.ndarray  # (S, S) in [0, 1], same frame as EgoMaps

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"traversable map must be square 2D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise ValueError("traversable values must be finite and within [0, 1]")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def to_pgm(self, path: str | os.PathLike) -> None:
        write_pgm(path, unit_to_pgm(self.values))


@dataclass(frozen=True)
class Waypoint:
    sector: int
    angle: float  # radians CCW from the agent heading, in [0, 2*pi)
    distance: float  # metres
    cell: tuple[int, int]
    score: float


def gaussian_target(waypoints: Iterable, sigma: float = 5.0, size: int = 192) -> TraversableMap:
    """Mean of unit-peak Gaussians centred on the given crop cells."""
    cells = np.asarray(list(waypoints), dtype=np.float64).reshape(-1, 2)
    if len(cells) == 0:
        warnings.warn("no waypoints: target map is all zero", RuntimeWarning, stacklevel=2)
        return TraversableMap(np.zeros((size, size)))
    idx = np.arange(size, dtype=np.float64)
    total = np.zeros((size, size))
    for r, c in cells:
        gr = np.exp(-((idx - r) ** 2) / (2 * sigma ** 2))
        gc = np.exp(-((idx - c) ** 2) / (2 * sigma ** 2))
        total += np.outer(gr, gc)
    return TraversableMap(np.clip(total / len(cells), 0.0, 1.0))


def traversable_loss(pred: TraversableMap, gt: TraversableMap) -> float:
    a, b = _values(pred), _values(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _values(t) -> np.ndarray:
    return np.asarray(getattr(t, "values", t), dtype=np.float64)


_EIGHT = np.ones((3, 3), dtype=bool)


def predict_traversable(ego: EgoMaps, kind: str = "analytic", cfg: TraversableConfig = DEFAULT.traversable,
                        predictor: Callable | None = None) -> TraversableMap:
    """Score every crop cell as a subgoal.

    ``analytic``: clearance x reachability x landmark boost, where clearance
    ramps with distance to the nearest occupied cell and reachability keeps
    free cells 8-connected to the agent. ``external`` calls
    ``predictor(occupancy, semantic)`` and validates its output.
    """
    if kind == "external":
        if predictor is None:
            raise ValueError("external traversable predictor not supplied")
        out = np.asarray(predictor(ego.occupancy, ego.semantic), dtype=np.float64)
        expected = ego.occupancy.shape[:2]
        if out.shape != expected:
            raise ValueError(f"external predictor returned shape {out.shape}, expected {expected}")
        return TraversableMap(np.clip(np.nan_to_num(out), 0.0, 1.0))
    if kind != "analytic":
        raise ValueError(f"unknown traversable predictor {kind!r}")

    occ = ego.occupancy_labels
    size = occ.shape[0]
    ctr = size // 2
    occupied = occ == OCCUPIED
    if occupied.any():
        clearance = np.minimum(1.0, ndimage.distance_transform_edt(~occupied) / cfg.clearance_cells)
    else:
        clearance = np.ones(occ.shape)

    passable = occ == FREE
    if cfg.blind_radius > 0:
        i, j = np.ogrid[:size, :size]
        near = (i - ctr) ** 2 + (j - ctr) ** 2 <= (cfg.blind_radius / RESOLUTION) ** 2
        passable = passable | (near & (occ == VOID))
    passable[ctr, ctr] = True
    labels, _ = ndimage.label(passable, structure=_EIGHT)
    reach = (labels == labels[ctr, ctr]) & (occ == FREE)

    score = clearance * reach
    landmark = np.isin(ego.semantic_labels, list(LANDMARKS))
    score = np.where(landmark, np.minimum(1.0, score * cfg.landmark_boost), score)
    return TraversableMap(score)


@lru_cache(maxsize=4)
def sector_table(size: int = 192, resolution: float = RESOLUTION):
    """Per-cell ``(sector, angle, distance)`` arrays for a crop; read-only.

    Angles are CCW from the heading (+row), so +col is 90 degrees.
    """
    ctr = size // 2
    di, dj = np.meshgrid(np.arange(size) - ctr, np.arange(size) - ctr, indexing="ij")
    angle = np.mod(np.arctan2(dj, di), 2 * math.pi)
    # cells on exact multiples of 90 degrees must not slip into the previous sector
    sector = np.minimum(np.floor(angle / SECTOR_SPAN + 1e-9).astype(np.int64), N_SECTORS - 1)
    dist = np.hypot(di, dj) * resolution
    for a in (sector, angle, dist):
        a.setflags(write=False)
    return sector, angle, dist


@lru_cache(maxsize=4)
def _sector_orders(size: int, resolution: float):
    """Flat cell indices of each sector ordered by (larger distance, smaller index)."""
    sector, _, dist = sector_table(size, resolution)
    flat_sector, flat_dist = sector.ravel(), dist.ravel()
    order = np.lexsort((np.arange(flat_dist.size), -flat_dist))
    return [order[flat_sector[order] == s] for s in range(N_SECTORS)]


def _blocked(occ: np.ndarray, radius: int) -> np.ndarray:
    occupied = occ == OCCUPIED
    if radius <= 0:
        return occupied
    r = np.arange(-radius, radius + 1)
    disk = r[:, None] ** 2 + r[None, :] ** 2 <= radius ** 2
    return ndimage.binary_dilation(occupied, structure=disk)


def extract_waypoints(t: TraversableMap, ego: EgoMaps, k: int = 6, min_dist: float = 0.30,
                      exclusion_radius: int = 0, resolution: float = RESOLUTION) -> list[Waypoint]:
    """Best cell per 30-degree sector, then the top ``k`` sector winners.

    Within a sector, ties go to the farther cell, then the smaller flat index.
    Across sectors, ties go to the smaller sector, then the shorter distance.
    """
    if not 0 <= k <= N_SECTORS:
        raise ValueError("k must be within 0..12")
    if min_dist < 0:
        raise ValueError("min_dist must be non-negative")
    values = _values(t)
    size = values.shape[0]
    if ego.occupancy.shape[:2] != values.shape:
        raise ValueError("traversable map and ego maps differ in shape")
    sector, angle, dist = sector_table(size, resolution)
    score = values.ravel()
    ok = (~_blocked(ego.occupancy_labels, exclusion_radius)).ravel() & (dist.ravel() >= min_dist)
    masked = np.where(ok, score, -1.0)
    winners = []
    for s, order in enumerate(_sector_orders(size, resolution)):
        cand = masked[order]
        best = int(np.argmax(cand))
        if cand[best] <= 0:
            continue
        flat = int(order[best])
        r, c = divmod(flat, size)
        winners.append(Waypoint(s, float(angle[r, c]), float(dist[r, c]), (r, c), float(score[flat])))
    winners.sort(key=lambda w: (-w.score, w.sector, w.distance))
    return winners[:k]


def write_waypoints_csv(path: str | os.PathLike, waypoints: list[Waypoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sector", "angle_rad", "distance_m", "row", "col", "score"])
        for p in waypoints:
            w.writerow([p.sector, f"{p.angle:.6f}", f"{p.distance:.4f}", p.cell[0], p.cell[1], f"{p.score:.6f}"])
