"""Time the compiled kernels against the pure-Python fallback.

Workload: the 12-view bootstrap cloud of a generated house, queried and
rendered from the bootstrap pose; raycasting and free-space tracing use
the same scene.

    python benchmarks/bench_kernels.py [--repeat 3] [--template layout_B]
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from panoptic_nav import _kernels
from panoptic_nav.feature_fields import FeatureCloud
from panoptic_nav.harness.episode import harness_camera
from panoptic_nav.world_sim import Pose, generate_scene, observe


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def build_workload(template, seed):
    scene = generate_scene(template, seed)
    cam = harness_camera()
    x, y = scene.nav_nodes[len(scene.nav_nodes) // 2]
    pose = Pose(x, y, scene.floor_height, 0.0)
    cloud = FeatureCloud()
    for i in range(12):
        p = pose.rotated(i * math.pi / 6)
        depth, _, feat = observe(scene, p, cam)
        cloud.insert_view(feat, depth, p, cam, step=i)
    rng = np.random.default_rng(0)
    pos = cloud.positions.astype(np.float64)
    queries = pos[rng.integers(0, len(pos), 2000)] + rng.normal(0, 0.2, (2000, 3))
    origin = np.array([x, y, scene.floor_height + 0.88])
    ang = rng.uniform(-math.pi, math.pi, 256)
    elev = rng.uniform(-0.4, 0.2, 256)
    dirs = np.stack([np.cos(ang) * np.cos(elev), np.sin(ang) * np.cos(elev), np.sin(elev)], axis=1)
    cast_dirs = np.repeat(dirs, 40, axis=0)
    occ = np.zeros((512, 512), np.uint8)
    ends = rng.integers(0, 512, (5000, 2))
    return scene, cloud, queries, origin, dirs, cast_dirs, occ, ends


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--template", default="layout_B")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    scene, cloud, queries, origin, dirs, cast_dirs, occ, ends = build_workload(args.template, args.seed)
    c = cloud.cfg
    render_kw = dict(k=c.k, radius=c.radius, bandwidth=c.bandwidth, density_scale=c.density_scale,
                     n_samples=c.n_samples, extension=c.extension, near=c.near, march_step=c.march_step,
                     hit_radius=c.hit_radius, max_range=c.max_range, fallback_depth=c.fallback_depth)
    origins = np.repeat(origin[None], len(dirs), axis=0)
    print(f"{len(cloud)} cloud points, {len(scene.boxes)} boxes; backends: {', '.join(_kernels.BACKENDS)}")

    results = {}
    for name, k in _kernels.BACKENDS.items():
        index = k.VoxelIndex(cloud.positions, c.voxel, c.coarse_factor)
        feats = cloud.features
        r = {}
        r["index build"] = best_of(lambda: k.VoxelIndex(cloud.positions, c.voxel, c.coarse_factor), args.repeat)
        r["knn x2000"] = best_of(lambda: k.knn(index, queries, c.k, c.radius), args.repeat)
        r["render_rays x256"] = best_of(lambda: k.render_rays(index, feats, origins, dirs, **render_kw),
                                        args.repeat)
        r["raycast x10240"] = best_of(lambda: k.raycast(origin, cast_dirs, scene.box_min, scene.box_max, 10.0),
                                      args.repeat)
        r["trace_free x5000"] = best_of(
            lambda: k.trace_free(occ.copy(), np.zeros_like(occ), 256, 256, ends[:, 0], ends[:, 1]), args.repeat)
        results[name] = r

    names = list(results)
    header = f"{'kernel':<18}" + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for op in results[names[0]]:
        row = f"{op:<18}" + "".join(f"{results[n][op] * 1e3:>10.1f}ms" for n in names)
        if len(names) == 2:
            row += f"{results['python'][op] / results['compiled'][op]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
