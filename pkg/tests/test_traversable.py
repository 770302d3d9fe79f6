import math

import numpy as np
import pytest

from panoptic_nav.mapping import FREE, OCCUPIED, VOID, EgoMaps
from panoptic_nav.traversable import (N_SECTORS, TraversableMap, extract_waypoints, gaussian_target,
                                      predict_traversable, sector_table, traversable_loss, write_waypoints_csv)
from panoptic_nav.world_sim import CLASS_IDS

from oracles import gaussian_mixture_value, sector_grid, waypoints_bruteforce


def test_gaussian_target_peak_and_offset():
    t = gaussian_target([(96, 96)]).values
    assert t[96, 96] == pytest.approx(1.0, abs=1e-12)
    assert t[101, 96] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert t[96, 91] == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_gaussian_target_mixture(rng):
    cells = [tuple(x) for x in rng.integers(0, 192, size=(4, 2))]
    t = gaussian_target(cells).values
    for r, c in rng.integers(0, 192, size=(20, 2)):
        assert t[r, c] == pytest.approx(gaussian_mixture_value(cells, r, c), abs=1e-12)


def test_gaussian_target_empty_warns():
    with pytest.warns(RuntimeWarning):
        assert not gaussian_target([]).values.any()


def test_traversable_map_validation():
    with pytest.raises(ValueError):
        TraversableMap(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        TraversableMap(np.zeros((4, 5)))
    assert traversable_loss(np.ones((3, 3)), np.zeros((3, 3))) == 1.0


def test_sector_table_matches_integer_rule():
    sector, angle, dist = sector_table(64)
    assert np.array_equal(sector, sector_grid(64))
    assert sector[32 + 5, 32] == 0 and sector[32, 32 + 5] == 3  # forward, left
    assert dist[32 + 3, 32 + 4] == pytest.approx(0.25)


def random_case(rng, size=192):
    vals = rng.uniform(0, 1, (size, size))
    vals[rng.uniform(size=vals.shape) < 0.3] = 0.0
    vals = np.round(vals * rng.integers(2, 20)) / 20  # coarse values force ties
    occ = np.full((size, size), FREE, np.uint8)
    occ[rng.uniform(size=occ.shape) < 0.1] = OCCUPIED
    occ[rng.uniform(size=occ.shape) < 0.1] = VOID
    return np.clip(vals, 0, 1), occ


@pytest.mark.parametrize("exclusion", [0, 2])
def test_waypoints_match_bruteforce(rng, exclusion):
    sectors = sector_grid(192)
    for _ in range(5):
        vals, occ = random_case(rng)
        k = int(rng.integers(1, 13))
        got = extract_waypoints(TraversableMap(vals), EgoMaps.from_labels(occ), k, 0.3, exclusion)
        want = waypoints_bruteforce(vals, occ, k, 0.3, sectors=sectors, exclusion_radius=exclusion)
        assert [(w.sector, *w.cell, w.score) for w in got] == want


def test_waypoint_invariants(rng):
    vals, occ = random_case(rng)
    wps = extract_waypoints(TraversableMap(vals), EgoMaps.from_labels(occ), 12, 0.5)
    assert len({w.sector for w in wps}) == len(wps)
    for w in wps:
        assert occ[w.cell] != OCCUPIED and w.distance >= 0.5
        assert w.sector * math.pi / 6 <= w.angle < (w.sector + 1) * math.pi / 6 + 1e-12
        assert w.distance == pytest.approx(math.hypot(w.cell[0] - 96, w.cell[1] - 96) * 0.05)
    scores = [w.score for w in wps]
    assert scores == sorted(scores, reverse=True)


def test_waypoint_argument_checks():
    ego = EgoMaps.from_labels(np.full((16, 16), FREE, np.uint8))
    t = TraversableMap(np.ones((16, 16)))
    with pytest.raises(ValueError):
        extract_waypoints(t, ego, 13)
    with pytest.raises(ValueError):
        extract_waypoints(t, ego, 3, -1.0)
    with pytest.raises(ValueError):
        extract_waypoints(TraversableMap(np.ones((8, 8))), ego)
    assert extract_waypoints(TraversableMap(np.zeros((16, 16))), ego) == []


def corridor(size=64):
    occ = np.full((size, size), VOID, np.uint8)
    occ[:, 28:37] = FREE
    occ[:, 27] = OCCUPIED
    occ[:, 37] = OCCUPIED
    return occ


def test_analytic_predictor():
    occ = corridor()
    ego = EgoMaps.from_labels(occ)
    t = predict_traversable(ego).values
    assert t[32, 32] > 0 and t[10, 32] > 0
    assert (t[:, 27] == 0).all() and (t[:, :27] == 0).all()
    assert t[40, 32] > t[40, 29]  # clearance grows away from the walls
    occ2 = occ.copy()
    occ2[45, 28:37] = OCCUPIED  # cut the corridor ahead
    t2 = predict_traversable(EgoMaps.from_labels(occ2)).values
    assert (t2[46:, :] == 0).all()


def test_landmark_boost():
    occ = corridor()
    sem = np.zeros_like(occ)
    sem[20, 30:35] = CLASS_IDS["door"]
    t = predict_traversable(EgoMaps.from_labels(occ, sem)).values
    plain = predict_traversable(EgoMaps.from_labels(occ)).values
    assert (t[20, 30:35] >= plain[20, 30:35]).all() and t[20, 30] > plain[20, 30]


def test_external_predictor():
    ego = EgoMaps.from_labels(corridor())
    t = predict_traversable(ego, "external", predictor=lambda o, s: np.full(o.shape[:2], 2.0))
    assert (t.values == 1.0).all()
    with pytest.raises(ValueError):
        predict_traversable(ego, "external", predictor=lambda o, s: np.zeros((3, 3)))
    with pytest.raises(ValueError):
        predict_traversable(ego, "external")


def test_waypoint_csv(tmp_path, rng):
    vals, occ = random_case(rng, 64)
    wps = extract_waypoints(TraversableMap(vals), EgoMaps.from_labels(occ), 4, 0.3)
    write_waypoints_csv(tmp_path / "w.csv", wps)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert len(lines) == len(wps) + 1 and lines[0].startswith("sector,")


def test_sector_count():
    assert N_SECTORS == 12
