import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcom.geometry import contains, polytope_from_vertices, rectangle
from mpcom.radio import (
    DistanceModel,
    EmptyZone,
    FitConstraints,
    InvalidGrid,
    MultiZoneModel,
    OutsideAllZones,
    RadioMapGrid,
    WallSegment,
    eval_los,
    eval_multizone,
    fit_distance_model,
    fit_multizone,
    fit_zone,
    generate_radio_map,
    model_rmse_db,
    segment_zones,
    wall_transmission,
)
from mpcom.scenarios import layout_map

from oracles import brute_force_fit, multizone_gain

WORLD = rectangle(100.0, 100.0)


def open_map(rho0=1e-3, lam=2.0, sensor=(5.0, 5.0), size=100, walls=()):
    return generate_radio_map(list(walls), sensor, (0.0, 0.0), 0.1, size, size, rho0=rho0, lam=lam)


def test_generator_unit_distance():
    grid = generate_radio_map([], (0.0, 0.05), (0.95, 0.0), 0.1, 1, 1)
    assert grid.gains[0, 0] == pytest.approx(1e-3, rel=1e-12)


def test_generator_one_wall_crossing():
    wall = WallSegment((0.5, -1.0), (0.5, 1.0), 0.1)
    grid = generate_radio_map([wall], (0.0, 0.05), (0.95, 0.0), 0.1, 1, 1)
    assert grid.gains[0, 0] == pytest.approx(1e-4, rel=1e-12)


def test_generator_clamps_near_field():
    grid = generate_radio_map([], (0.05, 0.05), (0.0, 0.0), 0.1, 1, 1, rho0=1e-3, lam=2.0, d_min=0.5)
    assert grid.gains[0, 0] == pytest.approx(1e-3 * 0.5**-2)


def test_generator_rejects_empty_grid():
    with pytest.raises(InvalidGrid):
        generate_radio_map([], (0, 0), (0, 0), 0.1, 0, 5)


def test_wall_endpoint_grazing_ignored():
    wall = WallSegment((1.0, 0.0), (1.0, 1.0), 0.1)
    # the ray passes exactly through the wall's endpoint
    t = wall_transmission([wall], np.array([0.0, 0.0]), np.array([[2.0, 0.0]]))
    assert t[0] == 1.0


def test_eval_los_examples():
    assert eval_los(DistanceModel(1.0, 2.0), (1.0, 0.0), (0.0, 0.0)) == pytest.approx(1.0)
    assert eval_los(DistanceModel(1e-3, 2.0), (0.0, 0.0), (3.0, 4.0)) == pytest.approx(4e-5)
    a = eval_los(DistanceModel(1.0, 2.0), (10.0, 0.0), (0.0, 0.0))
    b = eval_los(DistanceModel(1.0, 4.0), (10.0, 0.0), (0.0, 0.0))
    assert a / b == pytest.approx(100.0)


def two_zone_model():
    z1 = polytope_from_vertices([(0, 0), (5, 0), (5, 5), (0, 5)])
    z2 = polytope_from_vertices([(0, 0), (10, 0), (10, 10), (0, 10)])
    return MultiZoneModel([z1, z2], [1e-3, 1e-5], [2.0, 0.0], np.array([1.0, 1.0]))


def test_multizone_reduces_to_los_in_zone_one():
    m = two_zone_model()
    for p in [(2.0, 3.0), (4.9, 0.1), (1.0, 4.0)]:
        assert eval_multizone(m, p, m.sensor) == pytest.approx(eval_los(DistanceModel(1e-3, 2.0), p, m.sensor), rel=1e-12)


def test_multizone_outside_raises():
    with pytest.raises(OutsideAllZones):
        eval_multizone(two_zone_model(), (20.0, 20.0), (1.0, 1.0))


def test_multizone_flat_zone():
    m = two_zone_model()
    for p in [(7.0, 7.0), (9.0, 1.0)]:
        assert eval_multizone(m, p, m.sensor) == pytest.approx(1e-5)


def test_multizone_matches_oracle_lowest_index():
    m = two_zone_model()
    rng = np.random.default_rng(0)
    for p in rng.uniform(0, 10, size=(200, 2)):
        want = multizone_gain([z.vertices for z in m.zones], m.beta, m.alpha, m.sensor, p)
        assert eval_multizone(m, p, m.sensor) == pytest.approx(want, rel=1e-12)


def test_fit_zone_self_consistency():
    grid = open_map(rho0=1e-3, lam=2.3)
    beta, alpha, err = fit_zone(grid, WORLD.translated((5, 5)), alpha_range=(0, 8))
    assert abs(alpha - 2.3) <= 0.05
    assert abs(beta / 1e-3 - 1) <= 0.05
    assert err < 1e-6


def test_fit_zone_constant_map_flat_exponent():
    grid = RadioMapGrid((0, 0), 0.1, np.full((30, 30), 3e-6), np.array([1.5, 1.5]))
    beta, alpha, err = fit_zone(grid, WORLD, alpha_range=(0.0, 0.0))
    assert alpha == 0.0
    assert beta == pytest.approx(3e-6, rel=1e-9)
    assert err < 1e-9


def test_fit_zone_too_few_cells():
    grid = open_map(size=20)
    with pytest.raises(EmptyZone):
        fit_zone(grid, rectangle(0.2, 0.2, (1.0, 1.0)))


def test_fit_zone_agrees_with_brute_force():
    walls = [WallSegment((4.0, 0.0), (4.0, 10.0), 0.05), WallSegment((7.0, 0.0), (7.0, 10.0), 0.3)]
    grid = generate_radio_map(walls, (2.0, 5.0), (0.0, 0.0), 0.5, 20, 20)
    zone = polytope_from_vertices([(4.0, 0.0), (10.0, 0.0), (10.0, 10.0), (4.0, 10.0)])
    beta, alpha, err = fit_zone(grid, zone, alpha_range=(0.0, 8.0))
    c = grid.cell_centers().reshape(-1, 2)
    sel = c[:, 0] >= 4.0
    d = np.maximum(np.linalg.norm(c[sel] - grid.sensor, axis=1), 0.5)
    a_bf, b_db_bf, err_bf = brute_force_fit(grid.gains_db.ravel()[sel], d, np.arange(0, 8.001, 0.01),
                                            np.arange(-60, -20, 0.01))
    assert abs(alpha - a_bf) <= 0.01
    assert err <= err_bf + 1e-9


def test_fit_distance_wall_free_is_exact():
    model, err = fit_distance_model(open_map(rho0=2e-3, lam=3.0))
    assert err <= 0.1
    assert model.lam == pytest.approx(3.0, abs=1e-3)


def test_fit_distance_constant_map_clamps():
    grid = RadioMapGrid((0, 0), 0.1, np.full((30, 30), 3e-6), np.array([1.5, 1.5]))
    model, err = fit_distance_model(grid)
    assert model.lam == pytest.approx(2.0)
    assert np.isfinite(err)


def test_shadowed_zone_exponent_differs():
    # a row of partition walls: each crossing steepens the apparent decay
    walls = [WallSegment((x, 0.0), (x, 10.0), 0.3) for x in (4.0, 5.5, 7.0, 8.5)]
    grid = generate_radio_map(walls, (2.0, 5.0), (0.0, 0.0), 0.1, 100, 100)
    los = polytope_from_vertices([(0, 0), (4, 0), (4, 10), (0, 10)])
    mz = fit_multizone(grid, [los, WORLD.translated((5, 5))], FitConstraints(rho0=1e-3))
    assert mz.alpha[0] == pytest.approx(2.0, abs=0.05)
    assert mz.alpha[1] > mz.alpha[0] + 0.5


def test_corridor_distance_fit_worse_than_zones():
    grid, zones, _ = layout_map("corridor")
    mz = fit_multizone(grid, zones, FitConstraints(rho0=1e-3))
    _, dist_err = fit_distance_model(grid)
    assert dist_err > model_rmse_db(grid, mz)


def test_fit_multizone_deterministic_and_reduces():
    grid = open_map(lam=2.5)
    a = fit_multizone(grid, [WORLD])
    b = fit_multizone(grid, [WORLD])
    assert a.beta == b.beta and a.alpha == b.alpha
    beta, alpha, _ = fit_zone(grid, WORLD, alpha_range=(2.0, 5.0))
    assert a.alpha[0] == alpha and a.beta[0] == beta


def test_fit_multizone_reports_zone_index():
    grid = open_map(size=20)
    with pytest.raises(EmptyZone) as info:
        fit_multizone(grid, [WORLD, rectangle(0.1, 0.1, (50, 50))])
    assert info.value.zone_index == 2


def test_segment_zones_wall_free_single_zone():
    zones = segment_zones(open_map(size=40))
    assert len(zones) == 1


def test_segment_zones_walled_room():
    room = [((6, 6), (9, 6)), ((9, 6), (9, 9)), ((9, 9), (6, 9)), ((6, 9), (6, 6))]
    walls = [WallSegment(a, b, 0.01) for a, b in room]
    grid = open_map(sensor=(2.5, 2.5), walls=walls)
    zones = segment_zones(grid)
    assert len(zones) >= 2
    assert contains(zones[0], grid.sensor)
    room_zone = [z for z in zones[1:] if abs(z.centroid[0] - 7.5) < 0.3 and abs(z.centroid[1] - 7.5) < 0.3]
    assert room_zone


def test_segment_zones_all_discarded():
    assert segment_zones(open_map(size=20), min_region_cells=10_000) == []


def test_grid_json_round_trip():
    grid = open_map(size=12, walls=[WallSegment((0.3, 0.0), (0.3, 1.2), 0.5)])
    text = grid.dumps()
    back = RadioMapGrid.from_dict(json.loads(text))
    np.testing.assert_allclose(back.gains_db, grid.gains_db, atol=1e-6)
    assert back.dumps() == text


def test_radial_symmetry_without_walls():
    grid = generate_radio_map([], (1.0, 1.0), (0.0, 0.0), 0.1, 20, 20)
    g = grid.gains
    np.testing.assert_allclose(g, g.T, rtol=1e-9)
    np.testing.assert_allclose(g, g[::-1, :], rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.9), st.floats(0.0, 0.1))
def test_generator_monotone_in_transmission(t, bump):
    lo = WallSegment((2.0, 0.0), (2.0, 3.0), t)
    hi = WallSegment((2.0, 0.0), (2.0, 3.0), min(1.0, t + bump))
    a = generate_radio_map([lo], (1.0, 1.5), (0, 0), 0.1, 40, 30)
    b = generate_radio_map([hi], (1.0, 1.5), (0, 0), 0.1, 40, 30)
    assert np.all(b.gains >= a.gains)
    assert np.all(np.isfinite(a.gains_db))
