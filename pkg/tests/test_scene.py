"""Scene construction and geometric query tests."""

import math

import numpy as np
import pytest

from satray.scene import (
    MaterialParams,
    SceneConfig,
    build_manhattan,
    occluded,
    occluded_batch,
    point_in_building,
    satellite_position,
    scene_to_json,
)


@pytest.fixture(scope="module")
def scene():
    return build_manhattan(SceneConfig())


@pytest.fixture(scope="module")
def one_building():
    return build_manhattan(SceneConfig(blocks_x=1, blocks_y=1))


# ---------------------------------------------------------------------------
# build_manhattan
# ---------------------------------------------------------------------------

def test_default_grid_counts_and_extent(scene):
    assert len(scene.buildings) == 9
    ex, ey = scene.extent
    assert ex == pytest.approx(3 * 40 + 2 * 20)
    assert ey == pytest.approx(3 * 30 + 2 * 20)
    assert np.allclose(scene.buildings[:, 1, 2], 20.0)


def test_wall_tile_counts(one_building):
    # 40x20 walls carry 8x4 tiles, 30x20 walls carry 6x4
    per_face = {}
    for t in one_building.tiles:
        per_face.setdefault(t.face, 0)
        per_face[t.face] += 1
    counts = sorted(per_face.values())
    assert counts == [24, 24, 32, 32]
    assert len(one_building.tiles) == 2 * 32 + 2 * 24


def test_wedge_topology(one_building):
    assert len(one_building.wedges) == 8
    for w in one_building.wedges:
        assert w.n_param == pytest.approx(1.5, abs=1e-12)
        # edge endpoints lie on both face planes
        for fi in (w.face0, w.face1):
            f = one_building.faces[fi]
            for p in (w.p0, w.p1):
                assert abs(np.dot(p - f.origin, f.normal)) < 1e-9
        # tangent1 sits at the exterior-angle limit from tangent0
        n0 = one_building.faces[w.face0].normal
        ang = math.atan2(float(np.dot(w.tangent1, n0)),
                         float(np.dot(w.tangent1, w.tangent0))) % (2 * math.pi)
        assert ang == pytest.approx(w.n_param * math.pi, abs=1e-9)


def test_face_normals_unit_and_outward(scene):
    for f in scene.faces:
        assert np.linalg.norm(f.normal) == pytest.approx(1.0)
        box = scene.buildings[f.building]
        inner = f.center - 0.1 * f.normal
        assert np.all(inner > box[0] - 1e-9) and np.all(inner < box[1] + 1e-9)
        assert point_in_building(f.center + 0.1 * f.normal, scene) is False


def test_buildings_do_not_overlap(scene):
    boxes = scene.buildings
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            lo = np.maximum(boxes[i, 0], boxes[j, 0])
            hi = np.minimum(boxes[i, 1], boxes[j, 1])
            assert np.any(hi <= lo)


def test_tile_areas_sum_to_face_area(scene):
    sums = {}
    for t in scene.tiles:
        sums[t.face] = sums.get(t.face, 0.0) + t.area
    for fi, s in sums.items():
        f = scene.faces[fi]
        assert s == pytest.approx(f.area, rel=1e-9)
        # centers on the parent face plane
    for t in scene.tiles:
        f = scene.faces[t.face]
        assert abs(np.dot(t.center - f.origin, f.normal)) < 1e-9


def test_edge_tiles_truncated():
    sc = build_manhattan(SceneConfig(blocks_x=1, blocks_y=1, tile_size=7.0))
    # 40 m wall split into 7s: 5 full columns + one 5 m edge column
    areas = sorted({round(t.area, 9) for t in sc.tiles})
    assert 49.0 in areas          # interior tiles
    assert 35.0 in areas          # 5 x 7 edge tiles
    for t in sc.tiles:
        f = sc.faces[t.face]
        total = sum(x.area for x in sc.tiles if x.face == t.face)
        assert total == pytest.approx(f.area, rel=1e-9)
        break


def test_invalid_configs_rejected():
    with pytest.raises(ValueError, match="blocks_x"):
        build_manhattan(SceneConfig(blocks_x=0))
    with pytest.raises(ValueError, match="street_width"):
        build_manhattan(SceneConfig(street_width=-1))
    with pytest.raises(ValueError, match="tile_size"):
        build_manhattan(SceneConfig(tile_size=25.0))
    with pytest.raises(ValueError, match="rel_permittivity"):
        build_manhattan(SceneConfig(material=MaterialParams(rel_permittivity=0.5)))


def test_construction_deterministic():
    a = scene_to_json(build_manhattan(SceneConfig()))
    b = scene_to_json(build_manhattan(SceneConfig()))
    assert a == b
    assert '"schema": "scene/1"' in a


# ---------------------------------------------------------------------------
# occluded
# ---------------------------------------------------------------------------

def _mid_street_rx():
    return np.array([80.0, 40.0, 1.5])


def test_los_threshold_cross_street(scene):
    # analytic onset: arctan((20 - 1.5) / 10) = 61.6 deg
    rx = _mid_street_rx()
    thr = math.degrees(math.atan2(20.0 - 1.5, 10.0))
    assert 61.0 < thr < 62.0
    tx_hi = satellite_position(70.0, 90.0, 1000.0, rx)
    tx_lo = satellite_position(50.0, 90.0, 1000.0, rx)
    assert not occluded(rx, tx_hi, scene)
    assert occluded(rx, tx_lo, scene)


def test_min_unoccluded_elevation_matches_analytic(scene):
    rx = _mid_street_rx()
    thr = math.degrees(math.atan2(20.0 - 1.5, 10.0))
    lo, hi = 10.0, 90.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if occluded(rx, satellite_position(mid, 90.0, 5000.0, rx), scene):
            lo = mid
        else:
            hi = mid
    assert hi == pytest.approx(thr, abs=0.1)


def test_vertical_segment_above_roof_clear(scene):
    p0 = np.array([20.0, 15.0, 20.0 + 1e-6])
    p1 = np.array([20.0, 15.0, 500.0])
    assert not occluded(p0, p1, scene)


def test_ground_blocks(scene):
    assert occluded(np.array([80.0, 40.0, 1.0]), np.array([80.0, 41.0, -1.0]), scene)
    assert occluded(np.array([80.0, 40.0, -1.0]), np.array([80.0, 41.0, -2.0]), scene)


def test_occluded_symmetric(scene):
    rng = np.random.default_rng(7)
    ex, ey = scene.extent
    for _ in range(200):
        p0 = rng.uniform([-10, -10, 0.1], [ex + 10, ey + 10, 60.0])
        p1 = rng.uniform([-10, -10, 0.1], [ex + 10, ey + 10, 60.0])
        assert occluded(p0, p1, scene) == occluded(p1, p0, scene)


def test_occluded_batch_matches_scalar(scene):
    rng = np.random.default_rng(11)
    ex, ey = scene.extent
    p0 = rng.uniform([-10, -10, -2], [ex + 10, ey + 10, 50.0], size=(400, 3))
    p1 = rng.uniform([-10, -10, -2], [ex + 10, ey + 10, 50.0], size=(400, 3))
    got = occluded_batch(p0, p1, scene)
    want = np.array([occluded(a, b, scene) for a, b in zip(p0, p1)])
    assert np.array_equal(got, want)


def test_grazing_contact_is_clear(scene):
    # ray skimming exactly along a roof plane does not hit the interior
    p0 = np.array([-5.0, 15.0, 20.0])
    p1 = np.array([200.0, 15.0, 20.0])
    assert not occluded(p0, p1, scene)


# ---------------------------------------------------------------------------
# satellite_position
# ---------------------------------------------------------------------------

def test_satellite_overhead():
    p = satellite_position(90.0, 37.0, 500.0, np.zeros(3))
    assert np.allclose(p, [0.0, 0.0, 500.0], atol=1e-9)


def test_satellite_trig():
    p = satellite_position(30.0, 0.0, 1000.0, np.zeros(3))
    assert p[0] == pytest.approx(866.0254037844, abs=1e-6)
    assert p[1] == pytest.approx(0.0, abs=1e-12)
    assert p[2] == pytest.approx(500.0, abs=1e-9)


def test_satellite_rejects_bad_elevation():
    with pytest.raises(ValueError):
        satellite_position(0.0, 0.0, 1000.0, np.zeros(3))
    with pytest.raises(ValueError):
        satellite_position(-5.0, 0.0, 1000.0, np.zeros(3))
    with pytest.raises(ValueError):
        satellite_position(30.0, 0.0, -1.0, np.zeros(3))
