"""Pure-Python/numpy versions of the compiled kernels.

Semantics match ``_core.pyx`` bit for bit on the integer paths and to
floating-point round-off on the compositing path.
"""

from __future__ import annotations

import math

import numpy as np

from .common import MAX_OPTICAL_DEPTH, block_range, build_coarse, build_csr, pack_key


class VoxelIndex:
    """Two-level voxel hash: dicts from packed fine keys to CSR buckets and
    from coarse block keys to the non-empty fine voxels inside them."""

    def __init__(self, points, voxel: float, coarse: int = 4):
        self.pts = np.ascontiguousarray(points, dtype=np.float32).reshape(-1, 3)
        self.pts64 = self.pts.astype(np.float64)
        self.voxel = float(voxel)
        self.coarse = int(coarse)
        self.n_points = len(self.pts)
        cells, starts, order = build_csr(self.pts, self.voxel)
        self.cells_array = cells
        self.starts_array = starts
        self.order_array = order
        self._table = {int(key): i for i, key in enumerate(cells.tolist())}
        ckeys, cstarts, cfine, fcoords = build_coarse(cells, self.coarse)
        self._blocks = {}
        for i, key in enumerate(ckeys.tolist()):
            fine = cfine[cstarts[i] : cstarts[i + 1]]
            lo = fcoords[fine].astype(np.float64) * self.voxel
            hi = (fcoords[fine] + 1).astype(np.float64) * self.voxel
            self._blocks[key] = (fine, lo, hi)

    def cell_of(self, key: int) -> int:
        return self._table.get(int(key), -1)

    def _candidates(self, q, radius: float, bound: float):
        """Point ids in the non-empty fine voxels whose box lies within
        ``bound`` of ``q``, in no particular order."""
        ranges = [block_range(q[a], radius, self.voxel, self.coarse) for a in range(3)]
        qa = np.asarray(q, dtype=np.float64)
        out = []
        for a in range(ranges[0][0], ranges[0][1] + 1):
            for b in range(ranges[1][0], ranges[1][1] + 1):
                for c in range(ranges[2][0], ranges[2][1] + 1):
                    blk = self._blocks.get(pack_key(a, b, c))
                    if blk is None:
                        continue
                    fine, lo, hi = blk
                    g = np.maximum(np.maximum(lo - qa, 0.0), qa - hi)
                    lb = np.sqrt(g[:, 0] * g[:, 0] + g[:, 1] * g[:, 1] + g[:, 2] * g[:, 2])
                    for f in fine[lb - 1e-9 <= bound].tolist():
                        out.append(self.order_array[self.starts_array[f] : self.starts_array[f + 1]])
        return np.concatenate(out) if out else np.zeros(0, np.int64)

    def _dists(self, ids, q):
        p = self.pts64[ids]
        dx = p[:, 0] - q[0]
        dy = p[:, 1] - q[1]
        dz = p[:, 2] - q[2]
        return np.sqrt(dx * dx + dy * dy + dz * dz)

    def knn_one(self, q, k: int, radius: float):
        if self.n_points == 0:
            return [], []
        ids = self._candidates(q, radius, radius)
        d = self._dists(ids, q)
        keep = d <= radius
        ids, d = ids[keep], d[keep]
        sel = np.lexsort((ids, d))[:k]
        return ids[sel].tolist(), d[sel].tolist()

    def any_within(self, q, radius: float) -> bool:
        if self.n_points == 0:
            return False
        ids = self._candidates(q, radius, radius)
        return bool(len(ids)) and bool((self._dists(ids, q) <= radius).any())


def knn(index: VoxelIndex, queries, k: int, radius: float):
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    ids = np.full((len(q), k), -1, dtype=np.int64)
    dists = np.full((len(q), k), np.inf)
    for i, row in enumerate(q.tolist()):
        found, d = index.knn_one(row, k, radius)
        ids[i, : len(found)] = found
        dists[i, : len(d)] = d
    return ids, dists


def render_rays(index: VoxelIndex, features, origins, dirs, *, k, radius, bandwidth,
                density_scale, n_samples, extension, near, march_step, hit_radius,
                max_range, fallback_depth):
    feats = np.asarray(features, dtype=np.float32)
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dd = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    nr, dim = len(o), feats.shape[1]
    out = np.zeros((nr, dim))
    opacity = np.zeros(nr)
    depth = np.zeros(nr)
    hit = np.zeros(nr, dtype=bool)
    covered = np.zeros(nr, dtype=bool)
    n_march = int(math.floor((max_range - near) / march_step + 1e-9)) + 1
    for r in range(nr):
        org, d = o[r], dd[r]
        dep = fallback_depth
        for m in range(n_march):
            t = near + m * march_step
            if index.any_within((org + t * d).tolist(), hit_radius):
                dep = t
                hit[r] = True
                break
        depth[r] = dep
        delta = (dep * (1.0 + extension) - near) / n_samples
        acc = 0.0
        for n in range(n_samples):
            tn = near + (n + 0.5) * delta
            ids, dist = index.knn_one((org + tn * d).tolist(), k, radius)
            if not ids:
                continue
            covered[r] = True
            w = np.exp(-((np.asarray(dist) / bandwidth) ** 2))
            wsum = w.sum()
            lat = (w[:, None] * feats[ids].astype(np.float64)).sum(axis=0) / wsum
            norm = math.sqrt(float(lat @ lat))
            sigma = density_scale * wsum
            weight = math.exp(-acc) * (1.0 - math.exp(-sigma * delta))
            acc += sigma * delta
            if norm > 0.0:
                out[r] += (weight / norm) * lat
            opacity[r] += weight
            if acc > MAX_OPTICAL_DEPTH:
                break
    return out, opacity, depth, hit, covered


def raycast(origin, dirs, box_min, box_max, max_range: float):
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    lo = np.asarray(box_min, dtype=np.float64).reshape(-1, 3)
    hi = np.asarray(box_max, dtype=np.float64).reshape(-1, 3)
    nr, nb = len(d), len(lo)
    t_out = np.zeros(nr)
    idx_out = np.full(nr, -1, dtype=np.int32)
    if nb == 0 or nr == 0:
        return t_out, idx_out
    tnear = np.full((nr, nb), -np.inf)
    tfar = np.full((nr, nb), np.inf)
    miss = np.zeros((nr, nb), dtype=bool)
    for a in range(3):
        da = d[:, a][:, None]
        flat = np.abs(da) < 1e-12
        outside = (o[a] < lo[:, a]) | (o[a] > hi[:, a])
        miss |= flat & outside[None, :]
        safe = np.where(flat, 1.0, da)
        t0 = (lo[:, a][None, :] - o[a]) / safe
        t1 = (hi[:, a][None, :] - o[a]) / safe
        tmin = np.where(flat, -np.inf, np.minimum(t0, t1))
        tmax = np.where(flat, np.inf, np.maximum(t0, t1))
        tnear = np.maximum(tnear, tmin)
        tfar = np.minimum(tfar, tmax)
    ok = ~miss & (tnear <= tfar) & (tnear > 0.0) & (tnear <= max_range)
    cand = np.where(ok, tnear, np.inf)
    best = np.argmin(cand, axis=1)
    tb = cand[np.arange(nr), best]
    found = np.isfinite(tb)
    t_out[found] = tb[found]
    idx_out[found] = best[found]
    return t_out, idx_out


def trace_free(occ: np.ndarray, touched: np.ndarray, r0: int, c0: int, r1s, c1s) -> None:
    h, w = occ.shape
    for r1, c1 in zip(np.asarray(r1s).tolist(), np.asarray(c1s).tolist()):
        r, c = r0, c0
        dr, dc = abs(r1 - r), abs(c1 - c)
        sr = 1 if r1 > r else -1
        sc = 1 if c1 > c else -1
        err = dc - dr
        while not (r == r1 and c == c1):
            if 0 <= r < h and 0 <= c < w:
                if occ[r, c] == 0:
                    occ[r, c] = 1
                touched[r, c] = 1
            e2 = 2 * err
            if e2 >= -dr:
                err -= dr
                c += sc
            if e2 <= dc:
                err += dc
                r += sr
