import math

import numpy as np
import pytest

from mpcom.comm import CommParams, Sensor, comm_utility
from mpcom.geometry import Circle, Pose, rectangle, regular_polygon
from mpcom.planner import (
    EmptyPath,
    LengthMismatch,
    Planner,
    PlannerConfig,
    PredictedObstacle,
    ReferenceInCollision,
    ReferenceWindow,
    comm_regularizer,
    convexify_collision,
    extract_local_reference,
    initialize,
    make_baseline,
    mm_solve,
    tracking_cost,
)
from mpcom.qp import Infeasible
from mpcom.radio import DistanceModel

P = CommParams()
STRAIGHT = [Pose(x, 0.0, 0.0) for x in np.linspace(0.0, 10.0, 11)]


def sensor_at(x, y, beta=1e-3, alpha=2.0):
    return Sensor(np.array([x, y]), P, DistanceModel(beta, alpha))


def fixed(shape, x, y, H=10):
    return PredictedObstacle(shape, np.tile([x, y, 0.0], (H + 1, 1)))


def arc_window(H=10, radius=3.0, step=0.08):
    ang = -math.pi / 2 + step / radius * np.arange(H + 1)
    return ReferenceWindow(np.column_stack([radius * np.cos(ang), radius * np.sin(ang), ang + math.pi / 2]))


# reference extraction


def test_reference_evenly_spaced_on_straight_path():
    ref = extract_local_reference(STRAIGHT, Pose(0, 0, 0), 5, 0.5)
    np.testing.assert_allclose(ref.states[:, 0], np.arange(6) * 0.5)
    np.testing.assert_allclose(ref.states[:, 1:], 0.0)


def test_reference_clamped_past_the_end():
    ref = extract_local_reference(STRAIGHT, Pose(12, 0, 0), 4, 0.5)
    np.testing.assert_allclose(ref.states, np.tile([10.0, 0.0, 0.0], (5, 1)))


def test_reference_needs_two_waypoints():
    with pytest.raises(EmptyPath):
        extract_local_reference([Pose(0, 0)], Pose(0, 0), 3, 0.1)


def test_reference_nearest_point_matches_dense_oracle():
    ang = np.linspace(0, math.pi, 30)
    path = [Pose(4 * math.cos(a), 4 * math.sin(a), a + math.pi / 2) for a in ang]
    dense = np.array([[4 * math.cos(a), 4 * math.sin(a)] for a in np.linspace(0, math.pi, 20001)])
    rng = np.random.default_rng(1)
    for p in rng.uniform(-5, 5, size=(20, 2)):
        ref = extract_local_reference(path, p, 2, 0.1)
        best = dense[np.argmin(np.linalg.norm(dense - p, axis=1))]
        # the polyline chord sits inside the arc by at most r(1 - cos(dphi / 2))
        assert abs(np.linalg.norm(ref.states[0, :2] - p) - np.linalg.norm(best - p)) <= 0.015


# costs


def test_tracking_cost_examples():
    ref = ReferenceWindow(np.zeros((3, 3)))
    assert tracking_cost(ref.states, ref) == 0.0
    s = np.zeros((3, 3))
    s[1, 0] = 1.0
    assert tracking_cost(s, ref) == pytest.approx(1.0)
    s = np.zeros((3, 3))
    s[2, 2] = 2 * math.pi
    assert tracking_cost(s, ref) == pytest.approx(0.0, abs=1e-20)


def test_tracking_cost_length_mismatch():
    with pytest.raises(LengthMismatch):
        tracking_cost(np.zeros((4, 3)), ReferenceWindow(np.zeros((3, 3))))


def test_tracking_cost_weights_scale_entries():
    ref = ReferenceWindow(np.zeros((3, 3)), weights=np.array([1.0, 1.0, 10.0]))
    s = np.zeros((3, 3))
    s[2, 0] = 1.0
    assert tracking_cost(s, ref) == pytest.approx(10.0)


def test_comm_regularizer_examples():
    s = sensor_at(0.0, 0.0)
    states = np.array([[2.0, 0.0, 0.0]])
    assert comm_regularizer(states, [s], 0.0) == 0.0
    one = comm_regularizer(states, [s], 1.0)
    assert one == pytest.approx(-comm_utility(Pose(2.0, 0.0), s))
    assert comm_regularizer(states, [s], 2.0) == pytest.approx(2 * one)


# collision convexification


def test_convexify_squares_support_arithmetic():
    hp = convexify_collision(np.zeros((1, 3)), rectangle(1.0, 1.0), [fixed(rectangle(1.0, 1.0), 3.0, 0.0, 0)], 0.1)
    np.testing.assert_allclose(hp.normal[0], [1.0, 0.0], atol=1e-12)
    assert hp.bound[0] == pytest.approx(1.9, abs=1e-12)


def test_convexify_point_mass_circles():
    body = regular_polygon(1.0, 32)
    hp = convexify_collision(np.zeros((1, 3)), body, [fixed(Circle(1.0), 5.0, 0.0, 0)], 0.1, "point_mass")
    np.testing.assert_allclose(hp.normal[0], [1.0, 0.0], atol=1e-12)
    # centre may travel to 5 - (2 + d_safe)
    assert hp.bound[0] == pytest.approx(5.0 - 2.1, abs=1e-9)


def test_convexify_far_obstacle_inactive():
    S = np.column_stack([np.linspace(0, 1, 11), np.zeros(11), np.zeros(11)])
    hp = convexify_collision(S, rectangle(0.8, 0.5), [fixed(rectangle(1.0, 1.0), 30.0, 30.0)], 0.1)
    assert np.all(hp.slack(S) > 0)


def test_convexify_reference_in_collision():
    with pytest.raises(ReferenceInCollision) as info:
        convexify_collision(np.zeros((2, 3)), rectangle(1.0, 1.0), [fixed(rectangle(1.0, 1.0), 0.5, 0.0, 1)], 0.1)
    assert info.value.m == 0 and info.value.h == 0


def test_convexify_point_mass_more_conservative_than_polytope():
    body, ob = rectangle(0.8, 0.5), fixed(rectangle(0.6, 0.6), 0.0, 2.0, 0)
    poly = convexify_collision(np.zeros((1, 3)), body, [ob], 0.1, "polytope")
    point = convexify_collision(np.zeros((1, 3)), body, [ob], 0.1, "point_mass")
    assert point.bound[0] < poly.bound[0]


# initialization and MM


def test_initialize_eta_zero_tracks_reference():
    ref = extract_local_reference(STRAIGHT, Pose(0, 0, 0), 10, 0.08)
    cfg = PlannerConfig(eta=0.0, rho=0.0)
    res = initialize(Pose(0, 0, 0), ref, [], cfg)
    assert np.max(np.abs(res.states[:, :2] - ref.states[:, :2])) < 0.05


def test_initialize_sensor_on_path_unchanged_by_eta():
    ref = extract_local_reference(STRAIGHT, Pose(0, 0, 0), 10, 0.08)
    s = sensor_at(0.4, 0.0)
    a = initialize(Pose(0, 0, 0), ref, [s], PlannerConfig(eta=0.0))
    b = initialize(Pose(0, 0, 0), ref, [s], PlannerConfig(eta=5.0))
    np.testing.assert_allclose(a.states[:, 1], b.states[:, 1], atol=1e-6)


def test_initialize_start_inside_obstacle_infeasible():
    ref = extract_local_reference(STRAIGHT, Pose(0, 0, 0), 10, 0.08)
    with pytest.raises(Infeasible):
        initialize(Pose(0, 0, 0), ref, [], PlannerConfig(), [fixed(rectangle(1.0, 1.0), 0.3, 0.0)])


def test_rho_zero_matches_rda_and_ignores_sensors():
    ref = arc_window()
    start = Pose(*ref.states[0])
    cfg = PlannerConfig(rho=0.0)
    a = mm_solve(start, ref, [], [], make_baseline("rda", cfg))
    b = mm_solve(start, ref, [sensor_at(0.5, 0.0)], [], cfg)
    np.testing.assert_allclose(a.states, b.states, atol=1e-9)


@pytest.mark.parametrize("rho", [0.1, 0.5, 2.0])
def test_inner_path_selected(rho):
    ref = arc_window()
    start = Pose(*ref.states[0])
    s = sensor_at(0.0, 0.0)
    base = mm_solve(start, ref, [s], [], PlannerConfig(rho=0.0))
    comm = mm_solve(start, ref, [s], [], PlannerConfig(rho=rho))
    h = ref.horizon // 2
    assert np.linalg.norm(comm.states[h, :2]) < np.linalg.norm(base.states[h, :2])


@pytest.mark.parametrize("seed", range(5))
def test_objective_trace_non_increasing(seed):
    rng = np.random.default_rng(seed)
    ref = arc_window()
    start = Pose(*ref.states[0])
    sensors = [sensor_at(*rng.uniform(-2, 2, 2)) for _ in range(2)]
    obs = [fixed(Circle(0.2), *(ref.states[6, :2] + rng.uniform(0.8, 1.2, 2)))]
    res = mm_solve(start, ref, sensors, obs, PlannerConfig(rho=1.0))
    assert np.all(np.diff(res.objective_trace) <= 1e-8)
    assert res.status in ("Converged", "MaxIters")


def test_sandwich_at_accepted_trajectory():
    ref = arc_window()
    s = sensor_at(0.0, 0.0)
    res = mm_solve(Pose(*ref.states[0]), ref, [s], [], PlannerConfig(rho=1.0))
    assert res.minorant is not None
    true = np.array([[comm_utility(p, s) for p in res.states]]).T
    slack = 1e-9 * (1 + np.abs(true))
    assert np.all(res.minorant[1:] <= res.surrogate[1:] + slack[1:])
    assert np.all(res.surrogate[1:] <= true[1:] + slack[1:])


def test_controls_respect_boxes():
    ref = arc_window()
    res = mm_solve(Pose(*ref.states[0]), ref, [sensor_at(0, 0)], [], PlannerConfig(rho=2.0))
    lim = PlannerConfig().limits
    assert np.all(res.controls >= np.array(lim.u_min) - 1e-12)
    assert np.all(res.controls <= np.array(lim.u_max) + 1e-12)


# baselines and receding horizon


def test_make_baseline_examples():
    base = PlannerConfig(rho=1.5)
    assert make_baseline("rda", base).rho == 0.0
    assert make_baseline("pcamp", base).collision_mode == "point_mass"
    sd, mp = make_baseline("sdcamp", base), make_baseline("mpcom", base)
    assert sd.comm_mode == "distance" and mp.comm_mode == "multizone"
    assert sd.to_dict() | {"comm_mode": "multizone"} == mp.to_dict()
    with pytest.raises(ValueError):
        make_baseline("nope", base)


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(horizon=0)
    with pytest.raises(ValueError):
        PlannerConfig(rho=-1.0)
    assert PlannerConfig.from_dict(PlannerConfig(rho=0.7).to_dict()) == PlannerConfig(rho=0.7)


def test_planner_goal_entries_weighted():
    cfg = PlannerConfig()
    planner = Planner(STRAIGHT, cfg)
    ref = planner.reference(Pose(9.8, 0.0, 0.0))
    assert ref.weights[0] == 1.0
    assert ref.weights[-1] == cfg.goal_weight


def test_planner_reference_advances_while_stationary():
    planner = Planner(STRAIGHT, PlannerConfig(max_lead=1.0))
    starts = [planner.reference(Pose(2.0, 0.0, 0.0)).arc_start for _ in range(20)]
    assert starts[1] > starts[0]
    assert max(starts) == pytest.approx(3.0)
