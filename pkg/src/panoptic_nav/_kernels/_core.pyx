# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: slab ray casting, ground-track marking, voxel-hash
k-nearest-neighbour search and batched feature-field ray compositing.

Every function mirrors ``_fallback.py`` exactly; the test suite runs both.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, exp, fabs, INFINITY
from libc.stdlib cimport malloc, free
from libc.stdint cimport int64_t, uint64_t, int32_t, uint8_t

from .common import MAX_OPTICAL_DEPTH as _MAX_OD, build_coarse, build_csr

cdef double MAX_OPTICAL_DEPTH = _MAX_OD

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef int KEY_BITS = 21
cdef int64_t KEY_OFFSET = 1 << 20
cdef int64_t KEY_MASK = (1 << 21) - 1


cdef inline int64_t floordiv(int64_t a, int64_t b) noexcept nogil:
    cdef int64_t q = a / b
    if (a % b != 0) and ((a < 0) != (b < 0)):
        q -= 1
    return q


cdef inline int64_t pack3(int64_t ix, int64_t iy, int64_t iz) noexcept nogil:
    ix += KEY_OFFSET
    iy += KEY_OFFSET
    iz += KEY_OFFSET
    if ix < 0 or iy < 0 or iz < 0 or ix > KEY_MASK or iy > KEY_MASK or iz > KEY_MASK:
        return -1
    return (ix << 42) | (iy << 21) | iz


cdef int _table_bits(Py_ssize_t n):
    cdef int bits = 4
    while (1 << bits) < 2 * n + 1:
        bits += 1
    return bits


cdef class VoxelIndex:
    """Two-level voxel hash over a point set.

    Fine voxels map to CSR buckets of point ids; coarse blocks (``coarse``
    fine voxels per side) map to the list of their non-empty fine voxels, so
    a query only visits occupied voxels near it.
    """

    cdef readonly double voxel
    cdef readonly int coarse
    cdef readonly Py_ssize_t n_points
    cdef readonly object cells_array
    cdef readonly object starts_array
    cdef readonly object order_array
    cdef object _keep  # arrays backing the raw pointers below
    cdef const float* pts
    cdef const int64_t* starts
    cdef const int64_t* order
    cdef const int64_t* cstarts
    cdef const int64_t* cfine
    cdef const int64_t* fcoords
    cdef int64_t* tkeys
    cdef int32_t* tvals
    cdef int tshift
    cdef uint64_t tmask
    cdef int64_t* ckeys
    cdef int32_t* cvals
    cdef int cshift
    cdef uint64_t cmask

    def __init__(self, points, double voxel, int coarse=4):
        pts = np.ascontiguousarray(points, dtype=np.float32).reshape(-1, 3)
        self.voxel = voxel
        self.coarse = coarse
        self.n_points = pts.shape[0]
        cells, starts, order = build_csr(pts, voxel)
        self.cells_array = cells
        self.starts_array = starts
        self.order_array = order
        ckeys, cstarts, cfine, fcoords = build_coarse(cells, coarse)
        fcoords = np.ascontiguousarray(fcoords, dtype=np.int64).reshape(-1, 3)
        tbits = _table_bits(len(cells))
        cbits = _table_bits(len(ckeys))
        tkeys = np.full(1 << tbits, -1, dtype=np.int64)
        tvals = np.full(1 << tbits, -1, dtype=np.int32)
        ck = np.full(1 << cbits, -1, dtype=np.int64)
        cv = np.full(1 << cbits, -1, dtype=np.int32)
        self.tshift = 64 - tbits
        self.tmask = (<uint64_t>1 << tbits) - 1
        self.cshift = 64 - cbits
        self.cmask = (<uint64_t>1 << cbits) - 1
        _fill(tkeys, tvals, cells, self.tshift, self.tmask)
        _fill(ck, cv, ckeys, self.cshift, self.cmask)
        self._keep = (pts, starts, order, cstarts, cfine, fcoords, tkeys, tvals, ck, cv)
        self.pts = <const float*>cnp.PyArray_DATA(pts)
        self.starts = <const int64_t*>cnp.PyArray_DATA(starts)
        self.order = <const int64_t*>cnp.PyArray_DATA(order)
        self.cstarts = <const int64_t*>cnp.PyArray_DATA(cstarts)
        self.cfine = <const int64_t*>cnp.PyArray_DATA(cfine)
        self.fcoords = <const int64_t*>cnp.PyArray_DATA(fcoords)
        self.tkeys = <int64_t*>cnp.PyArray_DATA(tkeys)
        self.tvals = <int32_t*>cnp.PyArray_DATA(tvals)
        self.ckeys = <int64_t*>cnp.PyArray_DATA(ck)
        self.cvals = <int32_t*>cnp.PyArray_DATA(cv)

    cdef inline int64_t lookup(self, int64_t key) noexcept nogil:
        return _get(self.tkeys, self.tvals, key, self.tshift, self.tmask)

    cdef inline int64_t coarse_lookup(self, int64_t key) noexcept nogil:
        return _get(self.ckeys, self.cvals, key, self.cshift, self.cmask)

    cdef int _scan_block(self, int64_t ci, double qx, double qy, double qz, int k, double radius,
                         double* bound, int* cnt, double* best_d, int64_t* best_i, bint first_only) noexcept nogil:
        """Merge the points of coarse block ``ci`` into the sorted best list;
        returns 1 when ``first_only`` finds a point within ``radius``."""
        cdef double v = self.voxel
        cdef int64_t f, pid
        cdef Py_ssize_t s, t
        cdef int j
        cdef double d, d2, lim2, dx, dy, dz, gx, gy, gz
        for s in range(self.cstarts[ci], self.cstarts[ci + 1]):
            f = self.cfine[s]
            gx = _gap(qx, self.fcoords[3 * f] * v, (self.fcoords[3 * f] + 1) * v)
            gy = _gap(qy, self.fcoords[3 * f + 1] * v, (self.fcoords[3 * f + 1] + 1) * v)
            gz = _gap(qz, self.fcoords[3 * f + 2] * v, (self.fcoords[3 * f + 2] + 1) * v)
            if sqrt(gx * gx + gy * gy + gz * gz) - 1e-9 > bound[0]:
                continue
            # squared prefilter with slack; the exact test below uses sqrt
            lim2 = bound[0] * bound[0] * (1.0 + 1e-9) + 1e-18
            for t in range(self.starts[f], self.starts[f + 1]):
                pid = self.order[t]
                dx = <double>self.pts[3 * pid] - qx
                dy = <double>self.pts[3 * pid + 1] - qy
                dz = <double>self.pts[3 * pid + 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > lim2:
                    continue
                d = sqrt(d2)
                if d > radius:
                    continue
                if first_only:
                    return 1
                if cnt[0] == k and (d > best_d[k - 1] or (d == best_d[k - 1] and pid > best_i[k - 1])):
                    continue
                j = cnt[0] if cnt[0] < k else k - 1
                while j > 0 and (best_d[j - 1] > d or (best_d[j - 1] == d and best_i[j - 1] > pid)):
                    best_d[j] = best_d[j - 1]
                    best_i[j] = best_i[j - 1]
                    j -= 1
                best_d[j] = d
                best_i[j] = pid
                if cnt[0] < k:
                    cnt[0] += 1
                if cnt[0] == k:
                    bound[0] = best_d[k - 1]
                    lim2 = bound[0] * bound[0] * (1.0 + 1e-9) + 1e-18
        return 0

    cdef int knn_one(self, double qx, double qy, double qz, int k, double radius,
                     double* best_d, int64_t* best_i, bint first_only) noexcept nogil:
        """Fill ``best_*`` with up to ``k`` neighbours sorted by (distance, id).
        With ``first_only`` return 1 as soon as any point lies within radius."""
        if self.n_points == 0:
            return 0
        cdef double v = self.voxel
        cdef int64_t x0 = floordiv(<int64_t>floor((qx - radius) / v - 1e-9), self.coarse)
        cdef int64_t x1 = floordiv(<int64_t>floor((qx + radius) / v + 1e-9), self.coarse)
        cdef int64_t y0 = floordiv(<int64_t>floor((qy - radius) / v - 1e-9), self.coarse)
        cdef int64_t y1 = floordiv(<int64_t>floor((qy + radius) / v + 1e-9), self.coarse)
        cdef int64_t z0 = floordiv(<int64_t>floor((qz - radius) / v - 1e-9), self.coarse)
        cdef int64_t z1 = floordiv(<int64_t>floor((qz + radius) / v + 1e-9), self.coarse)
        # the block holding the query goes first so the k-th distance bound
        # tightens early; visit order does not change the (distance, id) result
        cdef int64_t ha = floordiv(<int64_t>floor(qx / v), self.coarse)
        cdef int64_t hb = floordiv(<int64_t>floor(qy / v), self.coarse)
        cdef int64_t hc = floordiv(<int64_t>floor(qz / v), self.coarse)
        cdef int cnt = 0, state = 0
        cdef double bound = radius
        cdef int64_t a, b, cc, ci
        if x0 <= ha <= x1 and y0 <= hb <= y1 and z0 <= hc <= z1:
            ci = self.coarse_lookup(pack3(ha, hb, hc))
            if ci >= 0:
                state = self._scan_block(ci, qx, qy, qz, k, radius, &bound, &cnt, best_d, best_i, first_only)
                if state:
                    return 1
        for a in range(x0, x1 + 1):
            for b in range(y0, y1 + 1):
                for cc in range(z0, z1 + 1):
                    if a == ha and b == hb and cc == hc:
                        continue
                    ci = self.coarse_lookup(pack3(a, b, cc))
                    if ci < 0:
                        continue
                    state = self._scan_block(ci, qx, qy, qz, k, radius, &bound, &cnt, best_d, best_i, first_only)
                    if state:
                        return 1
        return cnt

    def cell_of(self, int64_t key):
        """CSR bucket index for a packed voxel key, or -1."""
        return self.lookup(key)


cdef inline double _gap(double q, double lo, double hi) noexcept nogil:
    if q < lo:
        return lo - q
    if q > hi:
        return q - hi
    return 0.0


cdef void _fill(int64_t[::1] keys, int32_t[::1] vals, src, int shift, uint64_t mask):
    cdef const int64_t[::1] sv = np.ascontiguousarray(src, dtype=np.int64)
    cdef Py_ssize_t i
    cdef uint64_t h
    for i in range(sv.shape[0]):
        h = ((<uint64_t>sv[i]) * GOLDEN) >> shift
        while keys[h] != -1 and keys[h] != sv[i]:
            h = (h + 1) & mask
        keys[h] = sv[i]
        vals[h] = <int32_t>i


cdef inline int64_t _get(const int64_t* keys, const int32_t* vals, int64_t key, int shift, uint64_t mask) noexcept nogil:
    if key < 0:
        return -1
    cdef uint64_t h = ((<uint64_t>key) * GOLDEN) >> shift
    cdef int64_t k
    while True:
        k = keys[h]
        if k == key:
            return vals[h]
        if k == -1:
            return -1
        h = (h + 1) & mask


def knn(VoxelIndex index, queries, int k, double radius):
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] qv = q
    cdef Py_ssize_t nq = qv.shape[0], i, j
    ids = np.full((nq, k), -1, dtype=np.int64)
    dists = np.full((nq, k), np.inf, dtype=np.float64)
    cdef int64_t[:, ::1] iv = ids
    cdef double[:, ::1] dv = dists
    cdef double* bd = <double*>malloc(k * sizeof(double))
    cdef int64_t* bi = <int64_t*>malloc(k * sizeof(int64_t))
    cdef int cnt
    try:
        with nogil:
            for i in range(nq):
                cnt = index.knn_one(qv[i, 0], qv[i, 1], qv[i, 2], k, radius, bd, bi, False)
                for j in range(cnt):
                    iv[i, j] = bi[j]
                    dv[i, j] = bd[j]
    finally:
        free(bd)
        free(bi)
    return ids, dists


def render_rays(VoxelIndex index, features, origins, dirs, *, int k, double radius,
                double bandwidth, double density_scale, int n_samples, double extension,
                double near, double march_step, double hit_radius, double max_range,
                double fallback_depth):
    """Composite feature-field samples along each ray.

    Returns ``(feature (R, D), opacity (R,), depth (R,), hit (R,), covered (R,))``.
    """
    farr = np.ascontiguousarray(features, dtype=np.float32)
    cdef const float* fbase = <const float*>cnp.PyArray_DATA(farr)
    o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dd = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] ov = o
    cdef const double[:, ::1] dv = dd
    cdef Py_ssize_t nr = ov.shape[0], D = farr.shape[1], r, n, j, c
    out = np.zeros((nr, D), dtype=np.float64)
    opacity = np.zeros(nr, dtype=np.float64)
    depth = np.zeros(nr, dtype=np.float64)
    hit = np.zeros(nr, dtype=np.bool_)
    covered = np.zeros(nr, dtype=np.bool_)
    cdef double[:, ::1] outv = out
    cdef double[::1] opv = opacity
    cdef double[::1] depv = depth
    cdef uint8_t[::1] hitv = hit.view(np.uint8)
    cdef uint8_t[::1] covv = covered.view(np.uint8)
    cdef double* bd = <double*>malloc(k * sizeof(double))
    cdef int64_t* bi = <int64_t*>malloc(k * sizeof(int64_t))
    cdef double* lat = <double*>malloc(D * sizeof(double))
    cdef double ox, oy, oz, dx, dy, dz, t, dep, length, delta, tn, px, py, pz
    cdef double wsum, w, sigma, norm, alpha, weight, acc, tau, s
    cdef int cnt
    cdef Py_ssize_t m, n_march
    cdef const float* frow
    cdef double* orow
    try:
        with nogil:
            n_march = <Py_ssize_t>floor((max_range - near) / march_step + 1e-9) + 1
            for r in range(nr):
                ox = ov[r, 0]; oy = ov[r, 1]; oz = ov[r, 2]
                dx = dv[r, 0]; dy = dv[r, 1]; dz = dv[r, 2]
                dep = fallback_depth
                for m in range(n_march):
                    t = near + m * march_step
                    if index.knn_one(ox + t * dx, oy + t * dy, oz + t * dz, 1, hit_radius, bd, bi, True):
                        dep = t
                        hitv[r] = 1
                        break
                depv[r] = dep
                length = dep * (1.0 + extension)
                delta = (length - near) / n_samples
                acc = 0.0
                for n in range(n_samples):
                    tn = near + (n + 0.5) * delta
                    px = ox + tn * dx
                    py = oy + tn * dy
                    pz = oz + tn * dz
                    cnt = index.knn_one(px, py, pz, k, radius, bd, bi, False)
                    if cnt == 0:
                        continue
                    covv[r] = 1
                    wsum = 0.0
                    for c in range(D):
                        lat[c] = 0.0
                    for j in range(cnt):
                        w = exp(-(bd[j] / bandwidth) * (bd[j] / bandwidth))
                        wsum += w
                        frow = fbase + bi[j] * D
                        for c in range(D):
                            lat[c] += w * frow[c]
                    sigma = density_scale * wsum
                    norm = 0.0
                    for c in range(D):
                        lat[c] /= wsum
                        norm += lat[c] * lat[c]
                    norm = sqrt(norm)
                    tau = exp(-acc)
                    alpha = 1.0 - exp(-sigma * delta)
                    weight = tau * alpha
                    acc += sigma * delta
                    if norm > 0.0:
                        s = weight / norm
                        orow = &outv[r, 0]
                        for c in range(D):
                            orow[c] += s * lat[c]
                    opv[r] += weight
                    if acc > MAX_OPTICAL_DEPTH:
                        break
    finally:
        free(bd)
        free(bi)
        free(lat)
    return out, opacity, depth, hit, covered


def raycast(origin, dirs, box_min, box_max, double max_range):
    """Nearest slab-method hit per ray: ``(t, box index)``; misses give (0, -1)."""
    o = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    cdef const double[::1] ov = o
    cdef const double[:, ::1] dv = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] lo = np.ascontiguousarray(box_min, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] hi = np.ascontiguousarray(box_max, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t nr = dv.shape[0], nb = lo.shape[0], r, b, a
    t_out = np.zeros(nr, dtype=np.float64)
    idx_out = np.full(nr, -1, dtype=np.int32)
    cdef double[::1] tv = t_out
    cdef int32_t[::1] iv = idx_out
    cdef double tnear, tfar, t0, t1, best, d
    cdef bint miss
    with nogil:
        for r in range(nr):
            best = INFINITY
            for b in range(nb):
                tnear = -INFINITY
                tfar = INFINITY
                miss = False
                for a in range(3):
                    d = dv[r, a]
                    if fabs(d) < 1e-12:
                        if ov[a] < lo[b, a] or ov[a] > hi[b, a]:
                            miss = True
                            break
                        continue
                    t0 = (lo[b, a] - ov[a]) / d
                    t1 = (hi[b, a] - ov[a]) / d
                    if t0 > t1:
                        t0, t1 = t1, t0
                    if t0 > tnear:
                        tnear = t0
                    if t1 < tfar:
                        tfar = t1
                if miss or tnear > tfar or tnear <= 0.0 or tnear > max_range:
                    continue
                if tnear < best:
                    best = tnear
                    iv[r] = <int32_t>b
            if iv[r] >= 0:
                tv[r] = best
    return t_out, idx_out


def trace_free(cnp.uint8_t[:, ::1] occ, cnp.uint8_t[:, ::1] touched, long r0, long c0, r1s, c1s):
    """Bresenham ground tracks from ``(r0, c0)`` to each endpoint, endpoint
    excluded: void cells (0) become free (1); every in-grid cell is touched."""
    cdef const int64_t[::1] rv = np.ascontiguousarray(r1s, dtype=np.int64)
    cdef const int64_t[::1] cv = np.ascontiguousarray(c1s, dtype=np.int64)
    cdef Py_ssize_t h = occ.shape[0], w = occ.shape[1], i
    cdef long r, c, r1, c1, dr, dc, sr, sc, err, e2
    with nogil:
        for i in range(rv.shape[0]):
            r = r0
            c = c0
            r1 = rv[i]
            c1 = cv[i]
            dr = r1 - r if r1 > r else r - r1
            dc = c1 - c if c1 > c else c - c1
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
