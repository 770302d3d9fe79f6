"""Helpers shared by the compiled and the pure-Python kernel backends."""

from __future__ import annotations

import math

import numpy as np

# compositing stops once transmittance falls below 1e-10
MAX_OPTICAL_DEPTH = -math.log(1e-10)

KEY_BITS = 21
KEY_OFFSET = 1 << (KEY_BITS - 1)
KEY_MASK = (1 << KEY_BITS) - 1


def pack_keys(cells: np.ndarray) -> np.ndarray:
    """Pack integer voxel coordinates ``(n, 3)`` into sortable int64 keys."""
    c = np.asarray(cells, dtype=np.int64) + KEY_OFFSET
    if c.size and (c.min() < 0 or c.max() > KEY_MASK):
        raise ValueError("voxel coordinates exceed the packable range")
    return (c[:, 0] << (2 * KEY_BITS)) | (c[:, 1] << KEY_BITS) | c[:, 2]


def pack_key(ix: int, iy: int, iz: int) -> int:
    return ((ix + KEY_OFFSET) << (2 * KEY_BITS)) | ((iy + KEY_OFFSET) << KEY_BITS) | (iz + KEY_OFFSET)


def voxel_coords(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) / voxel).astype(np.int64)


def build_csr(points: np.ndarray, voxel: float):
    """Sort point ids by voxel key.

    Returns ``(cells, starts, order)``: unique packed keys, CSR offsets of
    length ``len(cells) + 1`` and the point ids grouped by cell (ascending id
    inside each cell).
    """
    n = len(points)
    if n == 0:
        return (np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64))
    keys = pack_keys(voxel_coords(points, voxel))
    order = np.argsort(keys, kind="stable").astype(np.int64)
    sorted_keys = keys[order]
    cells, first = np.unique(sorted_keys, return_index=True)
    starts = np.append(first, n).astype(np.int64)
    return cells.astype(np.int64), starts, order


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64)
    return np.stack([((k >> (2 * KEY_BITS)) & KEY_MASK) - KEY_OFFSET,
                     ((k >> KEY_BITS) & KEY_MASK) - KEY_OFFSET,
                     (k & KEY_MASK) - KEY_OFFSET], axis=-1)


def build_coarse(cells: np.ndarray, coarse: int):
    """Group the non-empty fine voxels by coarse block.

    Returns ``(coarse_keys, coarse_starts, fine_ids, fine_coords)``: unique
    packed coarse keys, CSR offsets into ``fine_ids`` (indices into
    ``cells``), and the integer coordinates of every fine voxel.
    """
    fine = unpack_keys(cells).reshape(-1, 3)
    if len(fine) == 0:
        return np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64), fine
    ckeys = pack_keys(np.floor_divide(fine, coarse))
    order = np.argsort(ckeys, kind="stable").astype(np.int64)
    uniq, first = np.unique(ckeys[order], return_index=True)
    starts = np.append(first, len(order)).astype(np.int64)
    return uniq.astype(np.int64), starts, order, np.ascontiguousarray(fine)


def block_range(q: float, radius: float, voxel: float, coarse: int) -> tuple[int, int]:
    """Inclusive coarse-block range covering ``[q - radius, q + radius]`` on one axis."""
    lo = math.floor((q - radius) / voxel - 1e-9) // coarse
    hi = math.floor((q + radius) / voxel + 1e-9) // coarse
    return lo, hi


def box_gap(q: float, lo: float, hi: float) -> float:
    return max(lo - q, 0.0, q - hi)
