import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panoptic_nav.config import DEFAULT, FieldConfig
from panoptic_nav.feature_fields import (CloudFormatError, FeatureCloud, composite, load, observed_coverage, persist,
                                         restore, save)
from panoptic_nav.world_sim import CameraIntrinsics, Pose, class_feature, observe
from panoptic_nav.world_sim.scene import scene_with_boxes

from oracles import composite_scalar, knn_linear


def unit_rows(rng, n, d=8):
    f = rng.normal(size=(n, d))
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def test_composite_hand_values():
    f, op, w, t = composite([1.0], [1.0], [[2.0]])
    assert w[0] == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert f[0] == pytest.approx(2 * (1 - math.exp(-1)), abs=1e-15)
    f, op, w, t = composite([0.0, 0.0], [0.5, 0.5], [[1.0], [1.0]])
    assert op == 0.0 and t.tolist() == [1.0, 1.0, 1.0]
    f, op, w, t = composite([1e6, 1.0], [1.0, 1.0], [[1.0], [5.0]])
    assert op == pytest.approx(1.0) and f[0] == pytest.approx(1.0)


def test_composite_rejects_bad_inputs():
    with pytest.raises(ValueError):
        composite([-1.0], [1.0], [[0.0]])
    with pytest.raises(ValueError):
        composite([1.0], [0.0], [[0.0]])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 50), st.floats(1e-3, 1.0), st.floats(-1, 1)), min_size=1, max_size=30))
def test_composite_matches_scalar(samples):
    s, d, r = zip(*samples)
    lat = [[x, 1 - x] for x in r]
    f, op, w, t = composite(s, d, lat)
    rf, rop, rw, rt = composite_scalar(s, d, lat)
    assert np.allclose(w, rw, rtol=0, atol=1e-12)
    assert np.allclose(f, rf, rtol=0, atol=1e-12)
    assert np.all(np.diff(t) <= 0) and op <= 1 + 1e-12


def test_add_points_quantizes_to_half(rng):
    c = FeatureCloud(dim=8)
    f = unit_rows(rng, 5)
    c.add_points(rng.uniform(size=(5, 3)), f, step=3)
    assert np.array_equal(c.features, f.astype(np.float16).astype(np.float32))
    assert c.steps.tolist() == [3] * 5
    with pytest.raises(ValueError):
        c.add_points(np.zeros((2, 3)), np.zeros((3, 8)))


def test_eviction_drops_oldest(rng):
    cfg = FieldConfig(capacity=10)
    c = FeatureCloud(cfg, dim=4)
    c.add_points(np.zeros((6, 3)), np.ones((6, 4)), step=0)
    c.add_points(np.ones((6, 3)), np.ones((6, 4)), step=1)
    assert len(c) == 10
    assert (c.steps == 0).sum() == 4 and (c.steps == 1).sum() == 6


def test_knn_through_cloud(backend, rng):
    pts = rng.uniform(-1, 1, (300, 3))
    c = FeatureCloud(dim=8, backend=backend)
    c.add_points(pts, unit_rows(rng, 300))
    q = np.array([0.1, -0.2, 0.3])
    got = c.knn(q, 8, 0.5)
    want_i, want_d = knn_linear(pts.astype(np.float32), q, 8, 0.5)
    assert [i for i, _ in got] == want_i
    assert np.allclose([d for _, d in got], want_d)
    with pytest.raises(ValueError):
        c.knn(q, 0, 0.5)


def test_field_at_single_point():
    c = FeatureCloud(dim=3)
    c.add_points([[0, 0, 0]], [[0.0, 2.0, 0.0]])
    sigma, lat = c.field_at([0.15, 0, 0])
    assert sigma == pytest.approx(DEFAULT.fields.density_scale * math.exp(-1))
    assert np.allclose(lat, [0, 1, 0])
    assert c.field_at([5, 5, 5])[0] == 0.0


def render_oracle(pts, feats, o, d, cfg):
    """Scalar restatement of the per-ray render: march to the first point
    within hit_radius, then composite kernel-weighted neighbour latents."""
    dep = cfg.fallback_depth
    n_march = int(math.floor((cfg.max_range - cfg.near) / cfg.march_step + 1e-9)) + 1
    for m in range(n_march):
        t = cfg.near + m * cfg.march_step
        if knn_linear(pts, o + t * d, 1, cfg.hit_radius)[0]:
            dep = t
            break
    delta = (dep * (1 + cfg.extension) - cfg.near) / cfg.n_samples
    sig, lat = [], []
    for n in range(cfg.n_samples):
        p = o + (cfg.near + (n + 0.5) * delta) * d
        ids, dist = knn_linear(pts, p, cfg.k, cfg.radius)
        if not ids:
            sig.append(0.0)
            lat.append(np.zeros(feats.shape[1]))
            continue
        w = np.exp(-(np.array(dist) / cfg.bandwidth) ** 2)
        v = (w[:, None] * feats[ids]).sum(0) / w.sum()
        sig.append(cfg.density_scale * w.sum())
        lat.append(v / np.linalg.norm(v))
    f, op, _, _ = composite_scalar(sig, [delta] * len(sig), lat)
    return np.array(f), op, dep


def test_render_matches_oracle(backend, rng):
    cfg = FieldConfig(max_range=4.0)
    pts = (rng.uniform(-1, 1, (150, 3)) * [0.3, 1, 1] + [2.0, 0, 0]).astype(np.float32)
    feats = unit_rows(rng, 150).astype(np.float16).astype(np.float32)
    c = FeatureCloud(cfg, dim=8, backend=backend)
    c.add_points(pts, feats)
    dirs = unit_rows(rng, 6, 3) * [1, 0.3, 0.3] + [1.0, 0, 0]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    f, op, depth, hit, cov = c._render(np.zeros((6, 3)), dirs)
    for r in range(6):
        rf, rop, rdep = render_oracle(pts, feats.astype(np.float64), np.zeros(3), dirs[r], cfg)
        assert depth[r] == pytest.approx(rdep, abs=1e-12)
        assert np.allclose(f[r], rf, atol=1e-8) and op[r] == pytest.approx(rop, abs=1e-8)


def test_render_subregion_paths_agree(rng):
    pts = rng.uniform(-0.5, 0.5, (200, 3)) + [2, 0, 1]
    c = FeatureCloud(dim=8)
    c.add_points(pts, unit_rows(rng, 200))
    f1, op1 = c.render_subregion([0, 0, 1], [2, 0, 1])
    samples = c.ray_samples([0, 0, 1], [2, 0, 1])
    f2, op2, _, _ = composite([s.sigma for s in samples], [s.delta for s in samples],
                              np.array([s.latent for s in samples]))
    assert np.allclose(f1, f2, atol=1e-9) and op1 == pytest.approx(op2, abs=1e-9)


def test_external_field_negative_density_clamped(rng):
    c = FeatureCloud(dim=3, field_model=lambda cloud, p: (-1.0, np.ones(3)))
    with pytest.warns(RuntimeWarning):
        assert c.field_at([0, 0, 0])[0] == 0.0


def test_single_class_panorama():
    walls = [([-4, -4, -1], [4, -3.9, 4], "sofa"), ([-4, 3.9, -1], [4, 4, 4], "sofa"),
             ([-4, -4, -1], [-3.9, 4, 4], "sofa"), ([3.9, -4, -1], [4, 4, 4], "sofa"),
             ([-4, -4, -1], [4, 4, -0.9], "sofa"), ([-4, -4, 3.9], [4, 4, 4], "sofa")]
    scene = scene_with_boxes(walls)
    cam = CameraIntrinsics(33, 33, 90, 90)
    pose = Pose(0.0, 0.0, 0.0, 0.0)
    c = FeatureCloud()
    for i in range(12):
        p = pose.rotated(i * math.pi / 6)
        depth, _, feat = observe(scene, p, cam)
        c.insert_view(feat, depth, p, cam)
    pano = c.render_panorama(pose, cam)
    target = class_feature("sofa")
    assert all(float(v @ target) >= 0.95 for v in pano.features)


def test_persist_roundtrip(tmp_path, rng):
    c = FeatureCloud(dim=8)
    c.add_points(rng.uniform(-2, 2, (500, 3)), unit_rows(rng, 500), step=7)
    r = restore(persist(c))
    assert np.array_equal(r.positions, c.positions) and np.array_equal(r.features, c.features)
    assert np.array_equal(r.steps, c.steps)
    q = rng.uniform(-2, 2, (100, 3))
    assert np.array_equal(r.knn_batch(q)[0], c.knn_batch(q)[0])
    save(tmp_path / "c.bin", c)
    assert len(load(tmp_path / "c.bin")) == 500


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b[:10], 10),
    (lambda b: b[:-3], None),
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:], 4),
    (lambda b: b + b"\0", None),
])
def test_persist_rejects_corruption(rng, mutate, offset):
    c = FeatureCloud(dim=8)
    c.add_points(rng.uniform(size=(20, 3)), unit_rows(rng, 20))
    with pytest.raises(CloudFormatError) as e:
        restore(mutate(persist(c)))
    if offset is not None:
        assert e.value.offset == offset


def test_empty_cloud_roundtrip():
    c = restore(persist(FeatureCloud()))
    assert len(c) == 0
    assert c.knn([0, 0, 0]) == []


class _Img:
    def __init__(self, valid):
        self.valid = valid


def test_observed_coverage():
    v = np.zeros((16, 16), bool)
    assert observed_coverage(_Img(v), 8) == 0.0
    v[::2, ::2] = True
    assert observed_coverage(_Img(v), 8) == 1.0
    v[:] = False
    v[:8] = True
    assert observed_coverage(_Img(v), 8) == 0.5
