"""Feature point cloud under a voxel-hash index, with analytic field
queries and volume-rendered novel views."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import _kernels
from ..config import DEFAULT, FieldConfig, SimConfig
from ..world_sim.camera import CameraIntrinsics, Pose, camera_position, pixel_directions, subregion_directions
from ..world_sim.classes import FEATURE_DIM

log = logging.getLogger(__name__)


def composite(sigmas, deltas, latents):
    """Front-to-back compositing of ray samples.

    Returns ``(feature, opacity, weights, transmittance)`` where
    ``transmittance[n]`` is the fraction of light reaching sample ``n``
    and has one extra trailing entry for what leaves the ray.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    r = np.asarray(latents, dtype=np.float64)
    if np.any(s < 0) or np.any(d <= 0):
        raise ValueError("densities must be >= 0 and spacings > 0")
    sd = s * d
    acc = np.concatenate([[0.0], np.cumsum(sd)])
    trans = np.exp(-acc)
    alpha = -np.expm1(-sd)
    weights = trans[:-1] * alpha
    feature = weights @ r if len(weights) else np.zeros(r.shape[1:] if r.ndim > 1 else ())
    return feature, float(weights.sum()), weights, trans


@dataclass(frozen=True, eq=False)
class RaySample:
    position: np.ndarray
    sigma: float
    latent: np.ndarray
    delta: float


@dataclass(frozen=True, eq=False)
class RenderedView:
    region_features: np.ndarray  # (G, G, D)
    view_feature: np.ndarray  # (D,), unit or zero
    coverage: float
    opacity: np.ndarray  # (G, G)
    depth: np.ndarray  # (G, G) target depth used per subregion
    hit: np.ndarray  # (G, G) whether the depth came from a surface hit


@dataclass(frozen=True, eq=False)
class Panorama:
    features: np.ndarray  # (12, D); slot 0 observed, 1..11 rendered
    coverage: np.ndarray  # (12,)
    depth: np.ndarray  # (12, G, G) per-subregion target depths of the rendered slots
    views: tuple  # RenderedView per slot; None for an observed slot 0

    @property
    def covered(self) -> np.ndarray:
        return self.coverage > 0

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("slot,coverage," + ",".join(f"f{i}" for i in range(self.features.shape[1])) + "\n")
            for i, (c, v) in enumerate(zip(self.coverage, self.features)):
                f.write(f"{i},{c:.6f}," + ",".join(f"{x:.7g}" for x in v) + "\n")


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else np.zeros_like(v)


class FeatureCloud:
    """3D points carrying unit feature vectors.

    Features are rounded through half precision on insert so that the
    persisted form round-trips exactly. Point ids are positions in insertion
    order; eviction drops the oldest points and renumbers the rest.
    """

    def __init__(self, cfg: FieldConfig = DEFAULT.fields, sim: SimConfig = DEFAULT.sim, dim: int = FEATURE_DIM,
                 backend=None, field_model: Callable | None = None):
        self.cfg = cfg
        self.sim = sim
        self.dim = dim
        self.backend = backend or _kernels.active
        self.field_model = field_model
        self._pos = np.zeros((0, 3), np.float32)
        self._feat = np.zeros((0, dim), np.float32)
        self._step = np.zeros(0, np.uint32)
        self._pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._index = None

    # storage

    def __len__(self) -> int:
        return len(self._pos) + sum(len(p[0]) for p in self._pending)

    def _flush(self) -> None:
        if self._pending:
            self._pos = np.concatenate([self._pos] + [p[0] for p in self._pending])
            self._feat = np.concatenate([self._feat] + [p[1] for p in self._pending])
            self._step = np.concatenate([self._step] + [p[2] for p in self._pending])
            self._pending = []
            self._evict()

    @property
    def positions(self) -> np.ndarray:
        self._flush()
        return self._pos

    @property
    def features(self) -> np.ndarray:
        self._flush()
        return self._feat

    @property
    def steps(self) -> np.ndarray:
        self._flush()
        return self._step

    @property
    def index(self):
        self._flush()
        if self._index is None:
            self._index = self.backend.VoxelIndex(self._pos, self.cfg.voxel, self.cfg.coarse_factor)
        return self._index

    def add_points(self, positions, features, step: int = 0) -> None:
        pos = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
        feat = np.asarray(features, dtype=np.float32).reshape(-1, self.dim)
        if len(pos) != len(feat):
            raise ValueError("positions and features differ in length")
        if len(pos) == 0:
            return
        feat = feat.astype(np.float16).astype(np.float32)
        self._pending.append((pos, feat, np.full(len(pos), step, np.uint32)))
        self._index = None
        if len(self) > self.cfg.capacity:
            self._flush()

    def _evict(self) -> None:
        extra = len(self._pos) - self.cfg.capacity
        if extra <= 0:
            return
        order = np.argsort(self._step, kind="stable")
        keep = np.ones(len(self._pos), bool)
        keep[order[:extra]] = False
        self._pos, self._feat, self._step = self._pos[keep], self._feat[keep], self._step[keep]
        self._index = None
        log.debug("evicted %d oldest points", extra)

    def insert_view(self, feat, depth, pose: Pose, cam: CameraIntrinsics, step: int = 0,
                    stride: int | None = None) -> "FeatureCloud":
        """Lift every ``stride``-th valid pixel to a world point."""
        stride = stride or self.cfg.stride
        f = getattr(feat, "data", feat)
        valid = np.asarray(feat.valid) if hasattr(feat, "valid") else np.ones(f.shape[:2], bool)
        d = np.asarray(getattr(depth, "data", depth), dtype=np.float64)
        if d.shape != f.shape[:2] or d.shape != (cam.height, cam.width):
            raise ValueError(f"image shapes differ: depth {d.shape}, features {f.shape[:2]}, "
                             f"camera {(cam.height, cam.width)}")
        mask = np.zeros(d.shape, bool)
        mask[::stride, ::stride] = True
        mask &= valid & (d > 0)
        if not mask.any():
            return self
        dirs = pixel_directions(cam, pose.yaw, self.sim.ray_model)[mask]
        pts = camera_position(pose, self.sim.camera_height) + dirs * d[mask][:, None]
        self.add_points(pts, f[mask], step)
        return self

    def snapshot(self) -> "FeatureCloud":
        """Copy safe to render from while this cloud keeps changing."""
        self._flush()
        c = FeatureCloud(self.cfg, self.sim, self.dim, self.backend, self.field_model)
        c._pos, c._feat, c._step = self._pos.copy(), self._feat.copy(), self._step.copy()
        c._index = self._index
        return c

    # queries

    def knn(self, query, k: int | None = None, radius: float | None = None) -> list[tuple[int, float]]:
        """Up to ``k`` points within ``radius``, nearest first; ties by id."""
        k = self.cfg.k if k is None else k
        radius = self.cfg.radius if radius is None else radius
        if k < 1 or radius <= 0:
            raise ValueError("k must be >= 1 and radius > 0")
        ids, dists = self.backend.knn(self.index, np.asarray(query, dtype=np.float64).reshape(1, 3), k, radius)
        found = ids[0] >= 0
        return list(zip(ids[0][found].tolist(), dists[0][found].tolist()))

    def knn_batch(self, queries, k: int | None = None, radius: float | None = None):
        k = self.cfg.k if k is None else k
        radius = self.cfg.radius if radius is None else radius
        if k < 1 or radius <= 0:
            raise ValueError("k must be >= 1 and radius > 0")
        return self.backend.knn(self.index, np.asarray(queries, dtype=np.float64).reshape(-1, 3), k, radius)

    def field_at(self, position, k: int | None = None, radius: float | None = None,
                 kind: str | None = None) -> tuple[float, np.ndarray]:
        """Density and unit latent at ``position`` from its neighbours."""
        kind = kind or ("external" if self.field_model else "analytic")
        if kind == "external":
            if self.field_model is None:
                raise ValueError("no external field model configured")
            sigma, latent = self.field_model(self, np.asarray(position, dtype=np.float64))
            if sigma < 0:
                warnings.warn(f"external field returned negative density {sigma}; clamped to 0", RuntimeWarning)
                sigma = 0.0
            return float(sigma), np.asarray(latent, dtype=np.float64)
        if kind != "analytic":
            raise ValueError(f"unknown field kind {kind!r}")
        nb = self.knn(position, k, radius)
        if not nb:
            return 0.0, np.zeros(self.dim)
        ids = np.array([i for i, _ in nb])
        d = np.array([x for _, x in nb])
        w = np.exp(-((d / self.cfg.bandwidth) ** 2))
        lat = (w[:, None] * self.features[ids].astype(np.float64)).sum(0) / w.sum()
        return float(self.cfg.density_scale * w.sum()), _unit(lat)

    def ray_samples(self, cam_pos, target, n_samples: int | None = None) -> list[RaySample]:
        n = n_samples or self.cfg.n_samples
        o = np.asarray(cam_pos, dtype=np.float64)
        v = np.asarray(target, dtype=np.float64) - o
        length = float(np.linalg.norm(v))
        if length <= 0:
            raise ValueError("target coincides with the camera position")
        u = v / length
        near = self.cfg.near
        delta = (length * (1 + self.cfg.extension) - near) / n
        out = []
        for i in range(n):
            p = o + (near + (i + 0.5) * delta) * u
            s, lat = self.field_at(p)
            out.append(RaySample(p, s, lat, delta))
        return out

    def _render(self, origins, dirs, depth_override=None):
        """Kernel call; with ``depth_override`` the surface march is skipped."""
        c = self.cfg
        kw = dict(k=c.k, radius=c.radius, bandwidth=c.bandwidth, density_scale=c.density_scale,
                  n_samples=c.n_samples, extension=c.extension, near=c.near, march_step=c.march_step,
                  hit_radius=c.hit_radius, max_range=c.max_range, fallback_depth=c.fallback_depth)
        if depth_override is not None:
            kw.update(max_range=0.0, fallback_depth=float(depth_override))
        if len(self) == 0:
            n = len(origins)
            depth = np.full(n, kw["fallback_depth"])
            return np.zeros((n, self.dim)), np.zeros(n), depth, np.zeros(n, bool), np.zeros(n, bool)
        return self.backend.render_rays(self.index, self.features, origins, dirs, **kw)

    def render_subregion(self, cam_pos, target, n_samples: int | None = None) -> tuple[np.ndarray, float]:
        """Composite ``n_samples`` field samples on the ray toward ``target``."""
        if self.field_model is not None or (n_samples and n_samples != self.cfg.n_samples):
            samples = self.ray_samples(cam_pos, target, n_samples)
            f, op, _, _ = composite([s.sigma for s in samples], [s.delta for s in samples],
                                    np.array([s.latent for s in samples]))
            return f, op
        o = np.asarray(cam_pos, dtype=np.float64)
        v = np.asarray(target, dtype=np.float64) - o
        length = float(np.linalg.norm(v))
        if length <= 0:
            raise ValueError("target coincides with the camera position")
        f, op, *_ = self._render(o[None], (v / length)[None], depth_override=length)
        return f[0], float(op[0])

    def render_view(self, pose: Pose, cam: CameraIntrinsics, aggregator: str | Callable = "mean") -> RenderedView:
        """Render the view's G x G subregion centre rays and pool them."""
        g = self.cfg.grid
        dirs = subregion_directions(cam, pose.yaw, g, self.sim.ray_model).reshape(-1, 3)
        origin = camera_position(pose, self.sim.camera_height)
        origins = np.broadcast_to(origin, dirs.shape)
        if self.field_model is not None:
            feats, ops, depths, hits, cov = self._render_external(origins, dirs)
        else:
            feats, ops, depths, hits, cov = self._render(origins, dirs)
        region = feats.reshape(g, g, -1)
        opacity = ops.reshape(g, g)
        coverage = float(cov.mean())
        if callable(aggregator):
            view = np.asarray(aggregator(region, opacity), dtype=np.float64)
        elif aggregator == "mean":
            wsum = ops.sum()
            view = (ops @ feats) / wsum if wsum > 0 else np.zeros(self.dim)
        else:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        view = _unit(view) if coverage > 0 else np.zeros(self.dim)
        return RenderedView(region, view, coverage, opacity, depths.reshape(g, g), hits.reshape(g, g))

    def _render_external(self, origins, dirs):
        c = self.cfg
        n = len(dirs)
        feats = np.zeros((n, self.dim))
        ops, depths = np.zeros(n), np.full(n, c.fallback_depth)
        hits, cov = np.zeros(n, bool), np.zeros(n, bool)
        idx = self.index
        n_march = int(math.floor((c.max_range - c.near) / c.march_step + 1e-9)) + 1
        for r in range(n):
            for m in range(n_march):
                t = c.near + m * c.march_step
                p = origins[r] + t * dirs[r]
                if self.knn(p, 1, c.hit_radius):
                    depths[r], hits[r] = t, True
                    break
            samples = self.ray_samples(origins[r], origins[r] + depths[r] * dirs[r])
            cov[r] = any(s.sigma > 0 for s in samples)
            f, op, _, _ = composite([s.sigma for s in samples], [s.delta for s in samples],
                                    np.array([s.latent for s in samples]))
            feats[r], ops[r] = f, op
        del idx
        return feats, ops, depths, hits, cov

    def render_panorama(self, pose: Pose, cam: CameraIntrinsics, forward=None,
                        aggregator: str | Callable = "mean") -> Panorama:
        """Slot 0 from the observed forward image, slots 1..11 rendered at
        30-degree CCW steps. Without ``forward`` slot 0 is rendered too."""
        first = 0 if forward is None else 1
        views = [None] * first + [self.render_view(pose.rotated(i * math.pi / 6), cam, aggregator)
                                  for i in range(first, 12)]
        g = self.cfg.grid
        feats = np.zeros((12, self.dim))
        cov = np.zeros(12)
        depth = np.zeros((12, g, g))
        for i, v in enumerate(views):
            if v is not None:
                feats[i], cov[i], depth[i] = v.view_feature, v.coverage, v.depth
        if forward is not None:
            feats[0] = forward.mean_feature()
            cov[0] = observed_coverage(forward, g)
        return Panorama(feats, cov, depth, tuple(views))


def observed_coverage(img, grid: int = 8) -> float:
    """Fraction of the image's G x G blocks holding at least one valid pixel."""
    valid = np.asarray(img.valid)
    h, w = valid.shape
    rows = np.minimum(np.arange(h) * grid // h, grid - 1)
    cols = np.minimum(np.arange(w) * grid // w, grid - 1)
    hit = np.zeros((grid, grid), bool)
    r, c = np.nonzero(valid)
    hit[rows[r], cols[c]] = True
    return float(hit.mean())
