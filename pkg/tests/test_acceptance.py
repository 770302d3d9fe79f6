"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from panoptic_nav import _kernels
from panoptic_nav.cli import main as cli_main
from panoptic_nav.feature_fields import FeatureCloud, composite, persist, restore, save
from panoptic_nav.harness import compute_metrics
from panoptic_nav.harness.episode import harness_camera
from panoptic_nav.harness.metrics import path_length
from panoptic_nav.harness.suite import load_suite, run_suite
from panoptic_nav.mapping import OCCUPIED, EgoMaps, GlobalMaps, analytic_occupancy, ground_project
from panoptic_nav.traversable import TraversableMap, extract_waypoints, gaussian_target
from panoptic_nav.world_sim import Pose, class_feature, generate_scene, observe, template_names
from panoptic_nav.world_sim.scene import scene_with_boxes

from oracles import composite_scalar, gaussian_mixture_value, knn_linear, sector_grid, waypoints_bruteforce


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return _report


def test_criterion_01_composite_oracle(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, monotone, bounded = 0.0, True, True
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        s = rng.exponential(rng.uniform(0.1, 30), n) * (rng.uniform(size=n) > 0.2)
        d = rng.uniform(1e-3, 0.5, n)
        r = rng.normal(size=(n, 4))
        f, op, w, t = composite(s, d, r)
        rf, rop, rw, rt = composite_scalar(s.tolist(), d.tolist(), r.tolist())
        worst = max(worst, np.abs(f - rf).max(), np.abs(w - rw).max(), np.abs(t - rt).max(), abs(op - rop))
        monotone &= bool(np.all(np.diff(t) <= 0))
        bounded &= bool(w.sum() <= 1.0 + 1e-12)
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-10 and monotone and bounded and dt < 5,
           f"max |diff| {worst:.2e}, monotone {monotone}, weight-sum<=1 {bounded}, {dt:.2f}s")


def test_criterion_02_gaussian_target(report):
    t = gaussian_target([(96, 96)], sigma=5).values
    e1 = abs(t[96, 96] - 1.0)
    e2 = max(abs(t[101, 96] - math.exp(-0.5)), abs(t[96, 91] - math.exp(-0.5)))
    pair = [(90, 96), (100, 98)]
    mid = (95, 97)
    closed = 0.5 * (math.exp(-(25 + 1) / 50) + math.exp(-(25 + 1) / 50))
    t2 = gaussian_target(pair, sigma=5).values
    e3 = max(abs(t2[mid] - closed), abs(t2[mid] - gaussian_mixture_value(pair, *mid)))
    report(2, e1 <= 1e-6 and e2 <= 1e-6 and e3 <= 1e-5,
           f"peak err {e1:.1e}, 5-cell err {e2:.1e}, midpoint err {e3:.1e}")


def test_criterion_03_waypoints_oracle(report):
    rng = np.random.default_rng(3)
    sectors = sector_grid(192)
    mismatches, t_impl = 0, 0.0
    t0 = time.perf_counter()
    for i in range(200):
        kind = i % 4
        if kind == 0:  # continuous scores
            vals = rng.uniform(0, 1, (192, 192))
        elif kind == 1:  # few levels: many ties
            vals = rng.integers(0, 4, (192, 192)) / 3.0
        elif kind == 2:  # constant: ties everywhere
            vals = np.full((192, 192), 0.5)
        else:  # sparse blobs
            vals = gaussian_target(rng.integers(0, 192, (int(rng.integers(1, 6)), 2))).values
            vals[rng.uniform(size=vals.shape) < 0.5] = 0
        occ = rng.choice([0, 1, 2], size=(192, 192), p=[0.2, 0.6, 0.2]).astype(np.uint8)
        k = int(rng.integers(0, 13))
        min_dist = float(rng.choice([0.0, 0.3, 1.0, 2.5]))
        t1 = time.perf_counter()
        got = extract_waypoints(TraversableMap(vals), EgoMaps.from_labels(occ), k, min_dist)
        t_impl += time.perf_counter() - t1
        want = waypoints_bruteforce(vals, occ, k, min_dist, sectors=sectors)
        mismatches += [(w.sector, *w.cell, w.score) for w in got] != want
    dt = time.perf_counter() - t0
    report(3, mismatches == 0 and dt < 10,
           f"{mismatches} mismatches on 200 maps, {dt:.2f}s total ({t_impl:.2f}s extraction)")


def tour_maps(scene, order=None):
    cam = harness_camera()
    tour = []
    for p in scene.nav_nodes:
        if all(math.dist(p, q) >= 1.5 for q in tour):
            tour.append(p)
    poses = [Pose(x, y, scene.floor_height, i * math.pi / 6) for x, y in tour for i in range(12)]
    if order is not None:
        poses = [poses[i] for i in order(len(poses))]
    c = Pose((scene.bounds_min[0] + scene.bounds_max[0]) / 2, (scene.bounds_min[1] + scene.bounds_max[1]) / 2)
    maps = GlobalMaps.centered_on(c)
    for p in poses:
        depth, sem, _ = observe(scene, p, cam, with_features=False)
        ground_project(maps, depth, sem, p, cam)
    return maps


def test_criterion_04_mapping_fidelity(report):
    rng = np.random.default_rng(4)
    rows, ok = [], True
    for t in template_names():
        scene = generate_scene(t, 0)
        maps = tour_maps(scene)
        seen = maps.observation_count > 0
        agree = float(((maps.occupancy == OCCUPIED) == analytic_occupancy(scene, maps))[seen].mean())
        shuffled = tour_maps(scene, order=lambda n: rng.permutation(n))
        same = bool(np.array_equal(maps.occupancy == OCCUPIED, shuffled.occupancy == OCCUPIED))
        ok &= agree >= 0.97 and same
        rows.append(f"{t} {agree:.4f}{'' if same else ' ORDER-DEPENDENT'}")
    report(4, ok, "agreement " + ", ".join(rows))


def test_criterion_05_knn_oracle(report):
    rng = np.random.default_rng(5)
    mismatches = {name: 0 for name in _kernels.BACKENDS}
    for c in range(20):
        n = int(rng.integers(50, 3000))
        pts = (rng.normal(0, rng.uniform(0.2, 2), (n, 3)) + rng.uniform(-3, 3, 3)).astype(np.float32)
        k = int(rng.integers(1, 17))
        radius = float(rng.uniform(0.05, 1.0))
        q = np.concatenate([pts[rng.integers(0, n, 50)] + rng.normal(0, 0.1, (50, 3)),
                            rng.uniform(pts.min(0) - 0.5, pts.max(0) + 0.5, (50, 3))])
        want = [knn_linear(pts, qi, k, radius) for qi in q]
        for name, b in _kernels.BACKENDS.items():
            ids, dists = b.knn(b.VoxelIndex(pts, float(rng.choice([0.05, 0.1, 0.2])), int(rng.integers(1, 6))),
                               q, k, radius)
            for row_i, row_d, (wi, wd) in zip(ids, dists, want):
                got = row_i[row_i >= 0].tolist()
                mismatches[name] += got != wi or not np.array_equal(row_d[: len(got)], wd)
    report(5, sum(mismatches.values()) == 0, f"mismatches per backend over 100 queries x 20 clouds: {mismatches}")


def bundled_scenes():
    out = {}
    for name in ("main", "behind_agent", "door_stairs", "clutter"):
        s = load_suite(name)
        for spec in s.specs:
            out.setdefault(spec.scene_id, (s.scenes[spec.scene_id], spec.start))
    return out


def bootstrap(scene, pose, cam):
    cloud = FeatureCloud()
    for i in range(12):
        p = pose.rotated(i * math.pi / 6)
        depth, _, feat = observe(scene, p, cam)
        cloud.insert_view(feat, depth, p, cam, step=i)
    return cloud


def test_criterion_06_panorama_bootstrap(report):
    cam = harness_camera()
    worst, ok = 12, True
    for sid, (scene, start) in bundled_scenes().items():
        pose = Pose(start[0], start[1], scene.floor_height, start[2])
        pano = bootstrap(scene, pose, cam).render_panorama(pose, cam)
        good = int((pano.coverage > 0.9).sum())
        worst = min(worst, good)
        ok &= good >= 11
    walls = [([-4, -4, -1], [4, -3.9, 4]), ([-4, 3.9, -1], [4, 4, 4]), ([-4, -4, -1], [-3.9, 4, 4]),
             ([3.9, -4, -1], [4, 4, 4]), ([-4, -4, -1], [4, 4, -0.9]), ([-4, -4, 3.9], [4, 4, 4])]
    single = scene_with_boxes([(lo, hi, "bed") for lo, hi in walls])
    pose = Pose(0.5, -0.3, 0.0, 0.4)
    pano = bootstrap(single, pose, cam).render_panorama(pose, cam)
    cos = float(min(pano.features @ class_feature("bed")))
    ok &= cos >= 0.95
    report(6, ok, f"min slots with coverage>0.9 over {len(bundled_scenes())} scenes: {worst}/12; "
                  f"single-class min cos {cos:.4f}")


def sr(suite, preset, seeds, policy=None):
    return run_suite(suite, preset, seeds, policy).summary()["sr"]


def test_criterion_07_fields_ablation(report):
    t0 = time.perf_counter()
    main = load_suite("main")
    seeds = tuple(range(5))
    s_no, s_f, s_fm = (sr(main, p, seeds) for p in ("no_fields", "fields", "fields_memory"))
    behind = load_suite("behind_agent")
    seeds10 = tuple(range(10))
    b_f = run_suite(behind, "fields", seeds10)
    b_no = run_suite(behind, "no_fields", seeds10)
    f_ok = sum(r.sr for r in b_f.episodes)
    no_ok = sum(r.sr for r in b_no.episodes)
    dt = time.perf_counter() - t0
    ok = s_no < s_f <= s_fm + 0.05 and f_ok >= 8 and no_ok == 0 and dt < 180
    report(7, ok, f"SR no_fields {s_no:.2f} < fields {s_f:.2f} <= fields_memory {s_fm:.2f} + 0.05; "
                  f"behind-agent fields {f_ok:.0f}/10, no_fields {no_ok:.0f}/10; {dt:.0f}s")


def test_criterion_08_map_ablation(report):
    seeds = tuple(range(5))
    door = load_suite("door_stairs")
    d_full, d_nosem = sr(door, "full", seeds), sr(door, "no_semantic", seeds)
    clutter = load_suite("clutter")
    c_full, c_noocc = sr(clutter, "full", seeds), sr(clutter, "no_occupancy", seeds)
    report(8, d_full >= d_nosem and c_full >= c_noocc,
           f"door/stairs SR full {d_full:.2f} >= no_semantic {d_nosem:.2f}; "
           f"clutter SR full {c_full:.2f} >= no_occupancy {c_noocc:.2f}")


def test_criterion_09_metric_identities(report):
    rng = np.random.default_rng(9)
    ok = True
    for i in range(500):
        n = int(rng.integers(1, 30))
        traj = np.cumsum(rng.normal(0, 0.7, (n, 2)), axis=0)
        goal = traj[-1] + rng.normal(0, 2, 2)
        length = path_length(traj)
        if i % 2:  # exact-length paths
            lstar = length
        else:
            lstar = float(rng.uniform(0, 2 * length + 1))
        m = compute_metrics(traj, goal, 1.5, bool(rng.integers(0, 2)), lstar)
        ok &= m.osr >= m.sr and m.spl <= m.sr
        if i % 2 and lstar > 0:
            ok &= m.spl == m.sr
    # wandering factor 2: traversed length is twice the shortest path
    cases = [([(0, 0), (2, 0), (0, 0), (2, 0)], (2, 0), 3.0), ([(0, 0), (4.5, 0), (0, 0), (4.5, 0)], (4.5, 0), 6.75),
             ([(0, 0), (0, 1), (1, 1), (1, 0)], (1, 0), 1.5)]
    err = max(abs(compute_metrics(t, g, 0.1, True, ls).spl - 0.5) for t, g, ls in cases)
    ok &= err <= 1e-9
    report(9, ok, f"identities hold on 500 trajectories; wandering-factor-2 spl error {err:.1e}")


def test_criterion_10_persistence(report, tmp_path, capsys):
    scene = generate_scene("layout_B", 0)
    cam = harness_camera()
    x, y = scene.nav_nodes[len(scene.nav_nodes) // 2]
    cloud = bootstrap(scene, Pose(x, y, scene.floor_height, 0.0), cam)
    back = restore(persist(cloud))
    rng = np.random.default_rng(10)
    pos = cloud.positions
    q = pos[rng.integers(0, len(pos), 100)] + rng.normal(0, 0.2, (100, 3))
    a_i, a_d = cloud.knn_batch(q)
    b_i, b_d = back.knn_batch(q)
    same = bool(np.array_equal(a_i, b_i) and np.array_equal(a_d, b_d)
                and np.array_equal(cloud.features, back.features))
    path = tmp_path / "c.cloud"
    save(path, cloud)
    blob = path.read_bytes()
    codes = []
    for name, data in [("truncated", blob[: len(blob) // 2]), ("header", blob[:7]),
                       ("magic", b"JUNK" + blob[4:]), ("trailing", blob + b"xx")]:
        bad = tmp_path / f"{name}.cloud"
        bad.write_bytes(data)
        codes.append(cli_main(["field-inspect", str(bad)]))
    capsys.readouterr()
    report(10, same and codes == [3, 3, 3, 3],
           f"{len(cloud)} points, 100 knn queries identical: {same}; corrupt-file exit codes {codes}")
