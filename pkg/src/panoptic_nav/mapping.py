"""World-frame occupancy/semantic grids built by ground projection, and
agent-centric crops with optional refinement."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from . import _kernels
from .config import DEFAULT, MapConfig, SimConfig
from .io import write_pgm
from .world_sim.camera import CameraIntrinsics, Pose, camera_position, pixel_directions
from .world_sim.classes import NUM_CLASSES, WALKABLE

log = logging.getLogger(__name__)

VOID, FREE, OCCUPIED = 0, 1, 2
OCC_CLASSES = 3


@dataclass
class GlobalMaps:
    occupancy: np.ndarray  # (H, W) uint8: VOID / FREE / OCCUPIED
    semantic: np.ndarray  # (H, W, 27) class hit counts
    observation_count: np.ndarray  # (H, W)
    origin: tuple[float, float]  # world (x, y) of the corner of cell (0, 0)
    resolution: float = 0.05
    stats: dict = field(default_factory=lambda: {"updates": 0, "noop_updates": 0, "dropped_points": 0})

    # rows run along world +x, columns along world +y

    @classmethod
    def centered_on(cls, pose: Pose, cfg: MapConfig = DEFAULT.maps) -> "GlobalMaps":
        n, res = cfg.size, cfg.resolution
        # snap to the cell lattice so box faces on multiples of the cell size stay on cell edges
        ox = round(pose.x / res) * res - n / 2 * res
        oy = round(pose.y / res) * res - n / 2 * res
        return cls(np.zeros((n, n), np.uint8), np.zeros((n, n, NUM_CLASSES), np.uint32),
                   np.zeros((n, n), np.uint32), (ox, oy), res)

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    def cell_of(self, x, y):
        r = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        c = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        return r, c

    def cell_center(self, r, c):
        return (self.origin[0] + (np.asarray(r) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(c) + 0.5) * self.resolution)

    def inside(self, r, c):
        h, w = self.shape
        return (r >= 0) & (r < h) & (c >= 0) & (c < w)

    def copy(self) -> "GlobalMaps":
        return GlobalMaps(self.occupancy.copy(), self.semantic.copy(), self.observation_count.copy(),
                          self.origin, self.resolution, dict(self.stats))

    def semantic_argmax(self) -> np.ndarray:
        lab = self.semantic.argmax(axis=-1).astype(np.uint8)
        lab[self.semantic.sum(axis=-1) == 0] = 0
        return lab

    def dump(self, directory: str | os.PathLike, stem: str = "map") -> list[Path]:
        """Write occupancy and semantic PGMs plus a sidecar with the geometry."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{stem}_occupancy.pgm", d / f"{stem}_semantic.pgm", d / f"{stem}.txt"]
        write_pgm(paths[0], (self.occupancy * 127).astype(np.uint8))
        write_pgm(paths[1], self.semantic_argmax())
        paths[2].write_text(f"origin_x {self.origin[0]:.6f}\norigin_y {self.origin[1]:.6f}\n"
                            f"resolution {self.resolution:.6f}\nrows_axis x\ncols_axis y\n")
        return paths


def ground_project(maps: GlobalMaps, depth, sem, pose: Pose, cam: CameraIntrinsics,
                   sim: SimConfig = DEFAULT.sim, cfg: MapConfig = DEFAULT.maps, backend=None) -> GlobalMaps:
    """Fold one depth + semantic frame into ``maps`` (in place; also returned).

    Points in the obstacle band mark their cell occupied, points below it
    mark free; both add their class to the cell's counts. Ground tracks from
    the camera cell to each floor-level point cell turn void cells free; rays
    ending on walls or ceilings may pass over low furniture, so they clear
    nothing. Cells only ever move up the void < free < occupied order, so
    updates commute.
    """
    d = np.asarray(getattr(depth, "data", depth), dtype=np.float64)
    s = np.asarray(getattr(sem, "data", sem))
    maps.stats["updates"] += 1
    valid = d > 0
    if not valid.any():
        maps.stats["noop_updates"] += 1
        return maps
    k = backend or _kernels.active
    dirs = pixel_directions(cam, pose.yaw, sim.ray_model)[valid]
    cam_pos = camera_position(pose, sim.camera_height)
    pts = cam_pos + dirs * (d[valid] + cfg.surface_bias)[:, None]
    cls = s[valid].astype(np.int64)
    height = pts[:, 2] - pose.z
    r, c = maps.cell_of(pts[:, 0], pts[:, 1])
    inside = maps.inside(r, c)
    maps.stats["dropped_points"] += int((~inside).sum())
    r, c, cls, height = r[inside], c[inside], cls[inside], height[inside]

    occ = (height > cfg.obstacle_low) & (height < cfg.obstacle_high)
    low = height <= cfg.obstacle_low

    touched = np.zeros(maps.shape, np.uint8)
    cr, cc = maps.cell_of(cam_pos[0], cam_pos[1])
    if maps.inside(cr, cc) and low.any():
        w = maps.shape[1]
        ends = np.unique(r[low] * w + c[low])
        k.trace_free(maps.occupancy, touched, int(cr), int(cc), ends // w, ends % w)

    np.maximum.at(maps.occupancy, (r[occ], c[occ]), OCCUPIED)
    np.maximum.at(maps.occupancy, (r[low], c[low]), FREE)
    mark = occ | low
    np.add.at(maps.semantic, (r[mark], c[mark], cls[mark]), 1)
    # points above the band (ceilings) inform no cell
    touched[r[mark], c[mark]] = 1
    maps.observation_count += touched
    return maps


@dataclass(frozen=True, eq=False)
class EgoMaps:
    occupancy: np.ndarray  # (S, S, 3) class distribution over void/free/occupied
    semantic: np.ndarray  # (S, S, 27) class distribution, all-zero where unknown

    @property
    def size(self) -> int:
        return self.occupancy.shape[0]

    @property
    def center(self) -> int:
        return self.size // 2

    # label grids are cached read-only views; the maps are treated as immutable
    @cached_property
    def occupancy_labels(self) -> np.ndarray:
        lab = self.occupancy.argmax(axis=-1).astype(np.uint8)
        lab.setflags(write=False)
        return lab

    @cached_property
    def semantic_labels(self) -> np.ndarray:
        lab = self.semantic.argmax(axis=-1).astype(np.uint8)
        lab[self.semantic.sum(axis=-1) <= 0] = 0
        lab.setflags(write=False)
        return lab

    @classmethod
    def from_labels(cls, occupancy: np.ndarray, semantic: np.ndarray | None = None) -> "EgoMaps":
        """Build from an occupancy label grid and an optional semantic label
        grid (0 = no class)."""
        occ = one_hot(np.asarray(occupancy), OCC_CLASSES)
        if semantic is None:
            sem = np.zeros(occ.shape[:2] + (NUM_CLASSES,), np.float32)
        else:
            semantic = np.asarray(semantic)
            sem = one_hot(semantic, NUM_CLASSES)
            sem[semantic == 0] = 0.0
        return cls(occ, sem)

    def dump(self, directory: str | os.PathLike, stem: str = "ego") -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{stem}_occupancy.pgm", d / f"{stem}_semantic.pgm"]
        write_pgm(paths[0], (self.occupancy_labels * 127).astype(np.uint8))
        write_pgm(paths[1], self.semantic_labels)
        return paths


def one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float32)[labels.astype(np.int64)]


def ego_offsets(size: int, resolution: float):
    """Forward / left metric offsets of every crop cell from the centre."""
    i = (np.arange(size) - size // 2) * resolution
    return np.meshgrid(i, i, indexing="ij")


def crop_ego(maps: GlobalMaps, pose: Pose, cfg: MapConfig = DEFAULT.maps) -> EgoMaps:
    """Agent-centred crop, rotated so the agent faces +row, by nearest-cell
    sampling. Rows of the crop run forward, columns to the agent's left."""
    size = cfg.crop
    ar, ac = maps.cell_of(pose.x, pose.y)
    px, py = maps.cell_center(ar, ac)
    fwd, left = ego_offsets(size, maps.resolution)
    cs, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    wx = px + cs * fwd - sn * left
    wy = py + sn * fwd + cs * left
    r, c = maps.cell_of(wx, wy)
    inside = maps.inside(r, c)
    rr, cc = np.where(inside, r, 0), np.where(inside, c, 0)
    occ_lab = np.where(inside, maps.occupancy[rr, cc], VOID)
    counts = maps.semantic[rr, cc].astype(np.float32)
    counts[~inside] = 0.0
    total = counts.sum(axis=-1, keepdims=True)
    sem = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)
    sem[occ_lab == VOID] = 0.0
    return EgoMaps(one_hot(occ_lab, OCC_CLASSES), sem)


def rotate_labels(labels: np.ndarray, angle: float) -> np.ndarray:
    """Rotate an agent-centred label grid by ``angle`` (CCW in the ego frame)
    with nearest-cell sampling; cells that fall outside become 0."""
    size = labels.shape[0]
    ctr = size // 2
    i, j = np.meshgrid(np.arange(size) - ctr, np.arange(size) - ctr, indexing="ij")
    cs, sn = math.cos(angle), math.sin(angle)
    si = np.floor(cs * i + sn * j + 0.5).astype(int) + ctr
    sj = np.floor(-sn * i + cs * j + 0.5).astype(int) + ctr
    ok = (si >= 0) & (si < size) & (sj >= 0) & (sj < size)
    out = np.zeros_like(labels)
    out[ok] = labels[si[ok], sj[ok]]
    return out


@dataclass(frozen=True)
class RefinerConfig:
    use_positional_embedding: bool = True
    embedding_channels: int = 16
    refiner_kind: str = "identity"  # identity | holefill | external
    external: Callable | None = None
    passes: int = 3
    min_free_neighbors: int = 6

    def __post_init__(self):
        if self.refiner_kind not in ("identity", "holefill", "external"):
            raise ValueError(f"unknown refiner kind {self.refiner_kind!r}")
        if self.use_positional_embedding and self.embedding_channels != 16:
            raise ValueError("positional embeddings use 16 channels")
        if self.refiner_kind == "external" and self.external is None:
            raise ValueError("external refiner needs a callable")


def positional_embedding(size: int = 192, channels: int = 16) -> np.ndarray:
    """Fixed sinusoidal ``(size, size, channels)`` embedding handed to
    external refiners as their initial positional input."""
    pos = (np.arange(size) - size // 2) / (size / 2)
    freqs = 2.0 ** np.arange(channels // 4)
    rows = pos[:, None, None] * freqs[None, None, :] * math.pi
    cols = pos[None, :, None] * freqs[None, None, :] * math.pi
    rows, cols = np.broadcast_arrays(rows, cols)
    emb = np.concatenate([np.sin(rows), np.cos(rows), np.sin(cols), np.cos(cols)], axis=-1)
    return emb.astype(np.float32)


_NEIGHBORS = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def holefill(ego: EgoMaps, passes: int = 3, min_free: int = 6) -> tuple[EgoMaps, list[int]]:
    """Fill void cells with at least ``min_free`` free 8-neighbours; returns
    the refined maps and the number of cells changed per pass.

    A filled cell takes the most common semantic label among its labelled
    neighbours (lowest class id on ties), or stays unlabelled.
    """
    occ = ego.occupancy_labels.copy()
    sem_lab = ego.semantic_labels.copy()
    sem = ego.semantic.copy()
    h, w = occ.shape
    offsets = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    changes = []
    for _ in range(passes):
        free_n = ndimage.convolve((occ == FREE).astype(np.int32), _NEIGHBORS, mode="constant", cval=0)
        fill = (occ == VOID) & (free_n >= min_free)
        rows, cols = np.nonzero(fill)
        n = len(rows)
        changes.append(n)
        if n == 0:
            break
        padded = np.pad(sem_lab, 1)
        nb = np.stack([padded[rows + 1 + di, cols + 1 + dj] for di, dj in offsets], axis=1)
        votes = np.zeros((n, NUM_CLASSES), np.int32)
        np.add.at(votes, (np.repeat(np.arange(n), len(offsets)), nb.ravel()), 1)
        votes[:, 0] = 0
        winner = votes.argmax(axis=1)
        has = votes.max(axis=1) > 0
        occ[rows, cols] = FREE
        newsem = np.zeros((n, NUM_CLASSES), np.float32)
        newsem[np.nonzero(has)[0], winner[has]] = 1.0
        sem[rows, cols] = newsem
        sem_lab[rows, cols] = np.where(has, winner, 0)
    changes += [0] * (passes - len(changes))
    if not any(changes):
        return ego, changes
    return EgoMaps(one_hot(occ, OCC_CLASSES), sem), changes


def refine(ego: EgoMaps, cfg: RefinerConfig = RefinerConfig()) -> EgoMaps:
    if cfg.refiner_kind == "identity":
        return ego
    if cfg.refiner_kind == "holefill":
        return holefill(ego, cfg.passes, cfg.min_free_neighbors)[0]
    emb = positional_embedding(ego.size, cfg.embedding_channels) if cfg.use_positional_embedding else None
    out = cfg.external(ego.occupancy, ego.semantic, emb)
    occ, sem = (np.asarray(a, dtype=np.float32) for a in out)
    _check_refined(occ, ego.occupancy.shape, "occupancy")
    _check_refined(sem, ego.semantic.shape, "semantic")
    if not np.allclose(occ.sum(-1), 1.0, atol=1e-4):
        raise ValueError("external refiner: occupancy distributions must sum to 1 along the class dimension")
    s = sem.sum(-1)
    if not np.all(np.isclose(s, 1.0, atol=1e-4) | np.isclose(s, 0.0, atol=1e-4)):
        raise ValueError("external refiner: semantic distributions must sum to 1 or 0 along the class dimension")
    return EgoMaps(occ, sem)


def _check_refined(arr: np.ndarray, expected: tuple, what: str) -> None:
    if arr.ndim != len(expected):
        raise ValueError(f"external refiner: {what} map has {arr.ndim} dimensions, expected {len(expected)}")
    for axis, (got, want) in enumerate(zip(arr.shape, expected)):
        if got != want:
            name = ("height", "width", "class")[axis]
            raise ValueError(f"external refiner: {what} {name} dimension (axis {axis}) is {got}, expected {want}")


def refinement_losses(pred: EgoMaps, gt: EgoMaps, eps: float = 1e-12) -> tuple[float, float]:
    """Pixel-wise cross-entropy ``(semantic, occupancy)`` against one-hot
    ground truth; semantic cells without a label are skipped."""
    if pred.occupancy.shape != gt.occupancy.shape or pred.semantic.shape != gt.semantic.shape:
        raise ValueError("prediction and ground truth shapes differ")
    occ_p = (pred.occupancy * gt.occupancy).sum(-1).astype(np.float64)
    occ_loss = float(-np.log(np.maximum(occ_p, eps)).mean())
    has = gt.semantic.sum(-1) > 0
    if has.any():
        sem_p = (pred.semantic * gt.semantic).sum(-1).astype(np.float64)[has]
        sem_loss = float(-np.log(np.maximum(sem_p, eps)).mean())
    else:
        sem_loss = 0.0
    return sem_loss, occ_loss


def semantic_only_occupancy(ego: EgoMaps) -> EgoMaps:
    """Occupancy read off the semantic crop alone: walkable classes are free,
    other labelled cells occupied, unlabelled cells void."""
    lab = ego.semantic_labels
    occ = np.full(lab.shape, OCCUPIED, np.uint8)
    occ[np.isin(lab, list(WALKABLE))] = FREE
    occ[lab == 0] = VOID
    return EgoMaps(one_hot(occ, OCC_CLASSES), ego.semantic)


def without_semantics(ego: EgoMaps) -> EgoMaps:
    return EgoMaps(ego.occupancy, np.zeros_like(ego.semantic))


def analytic_occupancy(scene, maps: GlobalMaps, sim: SimConfig = DEFAULT.sim) -> np.ndarray:
    """Boolean grid of cells whose centre lies in an obstacle footprint."""
    occ = np.zeros(maps.shape, bool)
    h, w = maps.shape
    for x0, y0, x1, y1 in scene.obstacle_rects(sim):
        r0 = max(int(math.ceil((x0 - maps.origin[0]) / maps.resolution - 0.5)), 0)
        r1 = min(int(math.floor((x1 - maps.origin[0]) / maps.resolution - 0.5)), h - 1)
        c0 = max(int(math.ceil((y0 - maps.origin[1]) / maps.resolution - 0.5)), 0)
        c1 = min(int(math.floor((y1 - maps.origin[1]) / maps.resolution - 0.5)), w - 1)
        if r0 <= r1 and c0 <= c1:
            occ[r0:r1 + 1, c0:c1 + 1] = True
    return occ


def ego_to_world(maps: GlobalMaps, pose: Pose, cell, size: int = DEFAULT.maps.crop) -> tuple[float, float]:
    """World (x, y) of the centre of ego crop cell ``(row, col)``."""
    px, py = maps.cell_center(*maps.cell_of(pose.x, pose.y))
    fwd = (cell[0] - size // 2) * maps.resolution
    left = (cell[1] - size // 2) * maps.resolution
    cs, sn = math.cos(pose.yaw), math.sin(pose.yaw)
    return float(px + cs * fwd - sn * left), float(py + sn * fwd + cs * left)
