import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2xsim.config import RSU_SPACING_M
from v2xsim.mobility import (RSU, SPACING_M, SPEED_MPS, Vehicle, advance_positions, advance_x, distance, lane_direction,
                             lane_y, nearest_rsu, nearest_rsu_index, place_rsus, spawn_vehicles)


def lane_gaps(vehicles, lane):
    xs = [v.x_m for v in vehicles if v.lane == lane]
    return np.diff(xs)


def test_lane_geometry():
    assert [lane_y(l) for l in range(6)] == [2, 6, 10, 14, 18, 22]
    assert [lane_direction(l) for l in range(6)] == [1, 1, 1, -1, -1, -1]
    assert list(lane_direction(np.arange(6))) == [1, 1, 1, -1, -1, -1]


def test_rsu_spacing():
    rsus = place_rsus(4)
    assert np.allclose(np.diff([r.x_m for r in rsus]), RSU_SPACING_M)
    assert all(r.y_m == -35 and r.tx_power_dbm == 46 for r in rsus)
    assert rsus[0].x_m == pytest.approx(866)


@pytest.mark.parametrize("scenario", [1, 2, 3])
def test_gap_law(scenario):
    lo, hi = SPACING_M[scenario]
    vehicles = spawn_vehicles(scenario, 10_000, np.random.default_rng(scenario))
    for lane in range(6):
        gaps = lane_gaps(vehicles, lane)
        assert np.all(gaps >= lo) and np.all(gaps <= hi)
        assert np.all(gaps > 0)  # strictly increasing before wrap
    assert all(0 <= v.x_m < 10_000 for v in vehicles)


def test_scenario3_one_lane():
    vs = spawn_vehicles(3, 10_000, np.random.default_rng(0), lanes=[0])
    assert {v.lane for v in vs} == {0}
    gaps = lane_gaps(vs, 0)
    assert gaps.min() >= 200 and gaps.max() <= 300


def test_dense_count_expectation():
    # mean gap 50.5 m over 10 km and 6 lanes; Monte-Carlo over 100 seeds
    counts = [len(spawn_vehicles(1, 10_000, np.random.default_rng(s))) for s in range(100)]
    assert all(600 <= c <= 60_000 for c in counts)
    assert np.mean(counts) == pytest.approx(6 * 10_000 / 50.5, rel=0.01)


def test_short_highway_places_every_lane():
    vs = spawn_vehicles(3, 300, np.random.default_rng(5))
    assert {v.lane for v in vs} == set(range(6))


def test_video_fraction():
    vs = spawn_vehicles(1, 10_000, np.random.default_rng(2), video_fraction=0.3)
    share = np.mean([v.service_class == "video_capable" for v in vs])
    assert share == pytest.approx(0.3, abs=0.05)
    assert all(v.service_class == "video_capable" for v in spawn_vehicles(2, 3464, np.random.default_rng(2)))


def test_advance_unit_conversion():
    v = Vehicle(0, 0, 0.0, 2.0, SPEED_MPS)
    (moved,) = advance_positions([v], 1e-3, 3464)
    assert moved.x_m == pytest.approx(140 / 3.6 / 1000)
    assert moved.y_m == v.y_m


def test_advance_wraps_and_rejects_zero_dt():
    x = advance_x(np.array([3464 - 0.01, 0.01]), np.array([SPEED_MPS, -SPEED_MPS]), 1e-3, 3464)
    assert np.all((x >= 0) & (x < 3464))
    assert x[0] < 1 and x[1] > 3463
    with pytest.raises(ValueError):
        advance_x(np.zeros(1), np.ones(1), 0.0, 100)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3000))
def test_position_domain_and_order(seed, steps):
    L = 3464.0
    vs = spawn_vehicles(2, L, np.random.default_rng(seed))
    x = np.array([v.x_m for v in vs])
    vel = np.array([v.direction * v.speed_mps for v in vs])
    x1 = advance_x(x, vel, steps * 1e-3, L)
    assert np.all((x1 >= 0) & (x1 < L))
    # equal speeds preserve the cyclic order within a lane
    for lane in range(6):
        idx = [i for i, v in enumerate(vs) if v.lane == lane]
        shift = (x1[idx] - x[idx]) % L
        assert np.allclose(shift, shift[0], atol=1e-6) or np.allclose(np.abs(shift - shift[0]), L, atol=1e-6)


@given(st.floats(0, 3463), st.floats(0, 3463), st.floats(0, 30), st.floats(0, 30))
def test_ring_distance_symmetric_and_bounded(x1, x2, y1, y2):
    d = distance(x1, y1, x2, y2, 3464)
    assert d == pytest.approx(float(distance(x2, y2, x1, y1, 3464)))
    assert d <= np.hypot(3464 / 2, y1 - y2) + 1e-9


def test_nearest_rsu_examples():
    rsus = [RSU(0, 866.0), RSU(1, 2598.0)]
    v = Vehicle(0, 0, 0.0, 2.0, SPEED_MPS)
    assert nearest_rsu(v, rsus) == 0
    mid = Vehicle(1, 0, 1732.0, 2.0, SPEED_MPS)
    assert nearest_rsu(mid, rsus) == 0
    assert nearest_rsu(v, [RSU(7, 3000.0)]) == 7
    # on a 5000 m ring, x=4900 is 966 m from RSU 0 across the seam
    far = Vehicle(2, 0, 4900.0, 2.0, SPEED_MPS)
    assert nearest_rsu(far, rsus) == 1
    assert nearest_rsu(far, rsus, 5000) == 0
    idx = nearest_rsu_index(np.array([0.0, 1732.0, 3400.0]), np.full(3, 2.0), np.array([866.0, 2598.0]),
                            np.array([-35.0, -35.0]))
    assert list(idx) == [0, 0, 1]
    with pytest.raises(ValueError):
        nearest_rsu(v, [])
