"""End-to-end acceptance checks; each test records one summary line."""
import math
import time

import numpy as np

from mpcom.comm import CommParams, DomainViolation, Sensor, comm_utility, surrogate, surrogate_gradient
from mpcom.dynamics import linearize
from mpcom.geometry import Circle, Pose, polytope_distance, polytope_from_vertices, rectangle
from mpcom.planner import (
    PlannerConfig,
    PredictedObstacle,
    ReferenceWindow,
    convexify_collision,
    make_baseline,
    mm_solve,
)
from mpcom.radio import (
    DistanceModel,
    FitConstraints,
    MultiZoneModel,
    WallSegment,
    fit_distance_model,
    fit_multizone,
    fit_zone,
    generate_radio_map,
    model_rmse_db,
)
from mpcom.scenarios import RHO0, layout_map, los_scenario, nlos_corridor_scenario
from mpcom.sim import run_episode, scenario_config

from oracles import brute_force_fit, central_difference, random_convex_polygon, sampled_set_distance, unicycle

P = CommParams()


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# --------------------------------------------------------------------------
# 1. surrogate properties


def _prop1_configs(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        alpha = rng.uniform(1.0, 6.0)
        beta = 10 ** rng.uniform(-7, -2)
        sensor = Sensor(rng.uniform(-5, 5, 2), P, DistanceModel(beta, alpha))
        r = rng.uniform(0.6, 8.0)
        ang = rng.uniform(-math.pi, math.pi)
        anchor = np.array([*(sensor.position + r * np.array([math.cos(ang), math.sin(ang)])), 0.0])
        s1 = anchor + np.array([*rng.uniform(-1, 1, 2), 0.0])
        s2 = anchor + np.array([*rng.uniform(-1, 1, 2), 0.0])
        d_min = sensor.model.d_min
        if min(np.linalg.norm(s[:2] - sensor.position) for s in (s1, s2, 0.5 * (s1 + s2))) < d_min:
            continue
        try:
            vals = [surrogate(s, anchor, sensor) for s in (s1, s2, 0.5 * (s1 + s2))]
        except DomainViolation:
            continue
        out.append((sensor, anchor, s1, s2, vals))
    return out


def test_c1_surrogate_properties(acceptance):
    with Timer() as t:
        configs = _prop1_configs()
        worst = dict(lower=math.inf, concave=math.inf, tight=0.0, grad=0.0)
        for sensor, anchor, s1, s2, (v1, v2, vm) in configs:
            worst["lower"] = min(worst["lower"], comm_utility(s1, sensor) + 1e-9 - v1)
            worst["concave"] = min(worst["concave"], vm - 0.5 * (v1 + v2))
            u = comm_utility(anchor, sensor)
            worst["tight"] = max(worst["tight"], abs(surrogate(anchor, anchor, sensor) - u) / u)
            g = surrogate_gradient(anchor, anchor, sensor)[:2]
            fd = central_difference(lambda z: comm_utility(z, sensor), anchor)[:2]
            worst["grad"] = max(worst["grad"], np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    ok = (worst["lower"] >= 0 and worst["concave"] >= -1e-9 and worst["tight"] <= 1e-12
          and worst["grad"] <= 1e-5 and t.seconds < 10)
    acceptance(1, "surrogate properties", ok,
               f"{len(configs)} configs, tight {worst['tight']:.1e}, grad {worst['grad']:.1e}, {t.seconds:.1f} s")
    assert len(configs) == 1000
    assert worst["lower"] >= 0
    assert worst["concave"] >= -1e-9
    assert worst["tight"] <= 1e-12
    assert worst["grad"] <= 1e-5
    assert t.seconds < 10


# --------------------------------------------------------------------------
# 2. MM monotonicity


def _planning_instance(rng, K, M, H=10):
    radius = rng.uniform(2.5, 6.0)
    step = 0.08
    ang = -math.pi / 2 + step / radius * np.arange(H + 1)
    ref = ReferenceWindow(np.column_stack([radius * np.cos(ang), radius * np.sin(ang), ang + math.pi / 2]))
    sensors = []
    for _ in range(K):
        zone = rectangle(40.0, 40.0)
        pos = rng.uniform(-3, 3, 2)
        los = rectangle(4.0, 4.0, pos)
        model_beta = [10 ** rng.uniform(-4, -2.5), 10 ** rng.uniform(-6, -4)]
        sensors.append(Sensor(pos, P, MultiZoneModel([los, zone], model_beta, [2.0, rng.uniform(1.0, 4.0)], pos)))
    obstacles = []
    while len(obstacles) < M:
        h = int(rng.integers(2, H + 1))
        side = rng.choice([-1.0, 1.0])
        normal = np.array([math.cos(ang[h]), math.sin(ang[h])])
        centre = ref.states[h, :2] + side * normal * rng.uniform(0.9, 2.0)
        shape = Circle(rng.uniform(0.1, 0.3)) if rng.random() < 0.5 else \
            polytope_from_vertices(random_convex_polygon(rng, (0, 0), (0.15, 0.35)))
        ob = PredictedObstacle(shape, np.tile([*centre, 0.0], (H + 1, 1)))
        try:
            convexify_collision(ref.states, rectangle(0.8, 0.5), [ob], 0.1)
        except Exception:
            continue
        if np.linalg.norm(centre - ref.states[0, :2]) < 1.2:
            continue
        obstacles.append(ob)
    return ref, sensors, obstacles


def test_c2_mm_monotonicity(acceptance):
    rng = np.random.default_rng(2)
    combos = [(K, M) for K in (1, 4) for M in (0, 2, 8)]
    converged = 0
    worst = -math.inf
    with Timer() as t:
        for i in range(20):
            K, M = combos[i % len(combos)]
            ref, sensors, obstacles = _planning_instance(rng, K, M)
            res = mm_solve(Pose(*ref.states[0]), ref, sensors, obstacles, PlannerConfig(rho=1.0))
            worst = max(worst, float(np.max(np.diff(res.objective_trace), initial=-math.inf)))
            converged += res.status == "Converged"
    ok = worst <= 1e-8 and converged >= 18 and t.seconds < 60
    acceptance(2, "MM monotonicity", ok, f"max step {worst:.1e}, converged {converged}/20, {t.seconds:.1f} s")
    assert worst <= 1e-8
    assert converged >= 18
    assert t.seconds < 60


# --------------------------------------------------------------------------
# 3. fit recovery


def test_c3_fit_recovery(acceptance):
    rng = np.random.default_rng(3)
    worst_a = worst_b = 0.0
    world = rectangle(100.0, 100.0)
    with Timer() as t:
        for _ in range(50):
            # the generator accepts exponents in [2, 5]
            beta, alpha = 10 ** rng.uniform(-5, -2), rng.uniform(2.0, 5.0)
            sensor = rng.uniform(1.0, 5.0, 2)
            grid = generate_radio_map([], sensor, (0.0, 0.0), 0.1, 60, 60, rho0=beta, lam=alpha)
            b, a, _ = fit_zone(grid, world, alpha_range=(0.0, 8.0))
            worst_a = max(worst_a, abs(a - alpha))
            worst_b = max(worst_b, abs(b / beta - 1))
    ok = worst_a <= 0.05 and worst_b <= 0.05 and t.seconds < 30
    acceptance(3, "fit recovery", ok, f"max |da| {worst_a:.3f}, max |db/b| {worst_b:.3f}, {t.seconds:.1f} s")
    assert worst_a <= 0.05 and worst_b <= 0.05
    assert t.seconds < 30


# --------------------------------------------------------------------------
# 4. zoned vs distance fitting error


def test_c4_fitting_error_direction(acceptance):
    rmse = {}
    with Timer() as t:
        for name in ("wide-open", "corridor", "room"):
            grid, zones, _ = layout_map(name)
            mz = fit_multizone(grid, zones, FitConstraints(rho0=RHO0))
            dist, _ = fit_distance_model(grid)
            rmse[name] = (model_rmse_db(grid, mz), model_rmse_db(grid, dist))
    ok = (rmse["corridor"][0] < rmse["corridor"][1] and rmse["room"][0] < rmse["room"][1]
          and abs(rmse["wide-open"][0] - rmse["wide-open"][1]) <= 1.0 and t.seconds < 30)
    detail = ", ".join(f"{k} {a:.2f}/{b:.2f} dB" for k, (a, b) in rmse.items())
    acceptance(4, "fitting error direction", ok, f"{detail}, {t.seconds:.1f} s")
    assert rmse["corridor"][0] < rmse["corridor"][1]
    assert rmse["room"][0] < rmse["room"][1]
    assert abs(rmse["wide-open"][0] - rmse["wide-open"][1]) <= 1.0
    assert t.seconds < 30


# --------------------------------------------------------------------------
# 5. LOS comparison


def test_c5_los_direction(acceptance):
    sc = los_scenario()
    runs = {m: [] for m in ("mpcom", "rda", "pcamp")}
    with Timer() as t:
        for r in range(5):
            for m in runs:
                runs[m].append(run_episode(sc, scenario_config(sc, m), m, seed=sc.seed + r))
    mean = {m: {k: float(np.mean([getattr(e, k) for e in eps])) for k in ("rdg_efficiency", "navigation_time")}
            for m, eps in runs.items()}
    gain = mean["mpcom"]["rdg_efficiency"] / mean["rda"]["rdg_efficiency"] - 1
    safe = not any(e.collided for m in ("mpcom", "rda") for e in runs[m])
    slower = mean["pcamp"]["navigation_time"] >= mean["rda"]["navigation_time"]
    ok = gain >= 0.03 and safe and slower and t.seconds < 300
    acceptance(5, "LOS direction", ok,
               f"efficiency {gain:+.2%} vs rda, pcamp {mean['pcamp']['navigation_time']:.1f} s vs "
               f"rda {mean['rda']['navigation_time']:.1f} s, collision-free {safe}, {t.seconds:.0f} s")
    assert gain >= 0.03
    assert safe
    assert slower
    assert t.seconds < 300


# --------------------------------------------------------------------------
# 6. NLOS task completion


def test_c6_nlos_direction(acceptance):
    sc = nlos_corridor_scenario()
    with Timer() as t:
        res = {m: run_episode(sc, scenario_config(sc, m), m) for m in ("mpcom", "sdcamp", "rda")}
    ratio = res["mpcom"].total_megabytes / res["sdcamp"].total_megabytes
    ok = ratio >= 2.0 and res["mpcom"].success and not res["rda"].success and t.seconds < 300
    acceptance(6, "NLOS direction", ok,
               f"mpcom {res['mpcom'].total_megabytes:.3f} MB (success {res['mpcom'].success}), "
               f"sdcamp {res['sdcamp'].total_megabytes:.3f} MB, ratio {ratio:.2f}, "
               f"rda success {res['rda'].success}, {t.seconds:.0f} s")
    assert ratio >= 2.0
    assert res["mpcom"].success
    assert not res["rda"].success
    assert t.seconds < 300


# --------------------------------------------------------------------------
# 7. latency


def test_c7_latency(acceptance):
    rng = np.random.default_rng(7)
    cfg = PlannerConfig(rho=1.0, horizon=10)
    times = []
    for _ in range(30):
        ref, sensors, obstacles = _planning_instance(rng, 1, 8)
        t0 = time.perf_counter()
        mm_solve(Pose(*ref.states[0]), ref, sensors, obstacles, cfg)
        times.append(time.perf_counter() - t0)
    med = float(np.median(times))
    acceptance(7, "latency", med <= 0.05, f"median {1e3 * med:.1f} ms over {len(times)} solves")
    assert med <= 0.05


# --------------------------------------------------------------------------
# 8. oracle equivalences


def test_c8_oracle_equivalences(acceptance):
    rng = np.random.default_rng(8)
    worst_d = 0.0
    for _ in range(200):
        a = random_convex_polygon(rng, rng.uniform(-2, 2, 2))
        b = random_convex_polygon(rng, rng.uniform(-2, 2, 2))
        d = polytope_distance(polytope_from_vertices(a), polytope_from_vertices(b))[0]
        worst_d = max(worst_d, abs(d - sampled_set_distance(polytope_from_vertices(a).vertices,
                                                            polytope_from_vertices(b).vertices)))
    worst_lin = 0.0
    for _ in range(200):
        s = np.array([*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi)])
        u = np.array([rng.uniform(-0.2, 1.0), rng.uniform(-1, 1)])
        worst_lin = max(worst_lin, float(np.max(np.abs(linearize(s, u, 0.1).predict(s, u) - unicycle(s, u, 0.1)))))
    walls = [WallSegment((4.0, 0.0), (4.0, 10.0), 0.05), WallSegment((7.0, 0.0), (7.0, 10.0), 0.3)]
    grid = generate_radio_map(walls, (2.0, 5.0), (0.0, 0.0), 0.5, 20, 20)
    zone = polytope_from_vertices([(4.0, 0.0), (10.0, 0.0), (10.0, 10.0), (4.0, 10.0)])
    _, alpha, _ = fit_zone(grid, zone, alpha_range=(0.0, 8.0))
    c = grid.cell_centers().reshape(-1, 2)
    sel = c[:, 0] >= 4.0
    d = np.maximum(np.linalg.norm(c[sel] - grid.sensor, axis=1), 0.5)
    a_bf, _, _ = brute_force_fit(grid.gains_db.ravel()[sel], d, np.arange(0, 8.001, 0.01), np.arange(-60, -20, 0.01))
    fit_gap = abs(alpha - a_bf)
    ok = worst_d <= 1e-3 and worst_lin <= 1e-12 and fit_gap <= 0.01 + 1e-12
    acceptance(8, "oracle equivalences", ok,
               f"distance {worst_d:.1e}, linearize {worst_lin:.1e}, fit alpha gap {fit_gap:.3f}")
    assert worst_d <= 1e-3
    assert worst_lin <= 1e-12
    assert fit_gap <= 0.01 + 1e-12


# --------------------------------------------------------------------------
# 9. rho = 0 reduces to the communication-unaware planner


def test_c9_rho_zero_reduction(acceptance):
    rng = np.random.default_rng(9)
    worst = 0.0
    for i in range(10):
        ref, sensors, obstacles = _planning_instance(rng, 1 + i % 4, (0, 2, 8)[i % 3])
        start = Pose(*ref.states[0])
        a = mm_solve(start, ref, sensors, obstacles, PlannerConfig(rho=0.0))
        b = mm_solve(start, ref, [], obstacles, make_baseline("rda"))
        worst = max(worst, float(np.max(np.abs(a.states - b.states))))
    acceptance(9, "rho = 0 reduction", worst <= 1e-9, f"max coordinate gap {worst:.1e} over 10 instances")
    assert worst <= 1e-9

