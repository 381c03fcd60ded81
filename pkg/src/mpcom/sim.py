"""Receding-horizon episodes, exact collision checks and benchmark tables.

The planner only ever sees the fitted propagation model chosen by its
``comm_mode``; harvested data is always accounted from the ground-truth grid.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .comm import CommParams, Sensor
from .dynamics import Limits, step_nonlinear
from .geometry import Circle, ConvexPolytope, Pose, polytope_from_vertices, shape_distance, transform_polytope, wrap_angle
from .planner import DEFAULT_BODY, Planner, PlannerConfig, PredictedObstacle, make_baseline
from .qp import Infeasible, QPNumericalFailure
from .radio import (
    DistanceModel,
    FitConstraints,
    MultiZoneModel,
    RadioMapGrid,
    WallSegment,
    fit_distance_model,
    fit_multizone,
    generate_radio_map,
    model_from_dict,
)

log = logging.getLogger(__name__)

CLEARANCE_SENTINEL = 1e9
BITS_PER_MB = 8e6
WALL_THICKNESS = 0.1
MAP_RESOLUTION = 0.1


class PlannerFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# scenario description


def _shape_to_dict(shape) -> dict:
    if isinstance(shape, Circle):
        return {"radius": shape.radius}
    return shape.to_dict()


def _shape_from_dict(d: dict):
    if "radius" in d:
        return Circle(float(d["radius"]))
    return polytope_from_vertices(d["vertices"])


@dataclass(frozen=True)
class Obstacle:
    """Body-frame shape moved along piecewise-linear ``(time, pose)`` knots."""

    shape: ConvexPolytope | Circle
    script: tuple[tuple[float, Pose], ...]

    def __post_init__(self):
        knots = tuple((float(t), p if isinstance(p, Pose) else Pose(*p)) for t, p in self.script)
        if not knots or knots[0][0] != 0.0:
            raise ValueError("obstacle script must start at t = 0")
        if any(b[0] <= a[0] for a, b in zip(knots, knots[1:])):
            raise ValueError("obstacle script times must be strictly increasing")
        object.__setattr__(self, "script", knots)

    @classmethod
    def static(cls, shape, pose: Pose) -> "Obstacle":
        return cls(shape, ((0.0, pose),))

    def _segment(self, t: float):
        times = [k[0] for k in self.script]
        i = int(np.searchsorted(times, t, side="right")) - 1
        return max(i, 0)

    def pose_at(self, t: float) -> Pose:
        i = self._segment(t)
        t0, p0 = self.script[i]
        if i + 1 >= len(self.script) or t <= t0:
            return p0
        t1, p1 = self.script[i + 1]
        f = (t - t0) / (t1 - t0)
        if f >= 1.0:
            return p1
        dth = float(wrap_angle(p1.theta - p0.theta))
        return Pose(p0.x + f * (p1.x - p0.x), p0.y + f * (p1.y - p0.y), p0.theta + f * dth)

    def velocity_at(self, t: float) -> np.ndarray:
        i = self._segment(t)
        if i + 1 >= len(self.script):
            return np.zeros(3)
        (t0, p0), (t1, p1) = self.script[i], self.script[i + 1]
        dt = t1 - t0
        return np.array([(p1.x - p0.x) / dt, (p1.y - p0.y) / dt, float(wrap_angle(p1.theta - p0.theta)) / dt])

    def predict(self, t: float, H: int, tau: float) -> np.ndarray:
        """Constant-velocity extrapolation from time ``t``: ``(H + 1, 3)``."""
        p = self.pose_at(t).as_array()
        v = self.velocity_at(t)
        return p + np.arange(H + 1)[:, None] * tau * v

    def to_dict(self) -> dict:
        return {"shape": _shape_to_dict(self.shape), "script": [[t, p.x, p.y, p.theta] for t, p in self.script]}

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        return cls(_shape_from_dict(d["shape"]), tuple((k[0], Pose(k[1], k[2], k[3] if len(k) > 3 else 0.0)) for k in d["script"]))


def wall_obstacle(wall: WallSegment, thickness: float = WALL_THICKNESS) -> Obstacle:
    a, b = np.asarray(wall.a), np.asarray(wall.b)
    d = b - a
    length = float(np.linalg.norm(d))
    mid = 0.5 * (a + b)
    hl, hw = 0.5 * length, 0.5 * thickness
    body = polytope_from_vertices([(-hl, -hw), (hl, -hw), (hl, hw), (-hl, hw)])
    return Obstacle.static(body, Pose(mid[0], mid[1], math.atan2(d[1], d[0])))


@dataclass(eq=False)
class SensorSpec:
    position: np.ndarray
    params: CommParams
    radio_map: RadioMapGrid
    multizone: MultiZoneModel | None = None
    distance: DistanceModel | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)

    def sensor_for(self, comm_mode: str) -> Sensor:
        """Planner-side view of the sensor for a given propagation model."""
        if comm_mode == "multizone":
            if self.multizone is None:
                raise ValueError("sensor has no fitted multi-zone model")
            return Sensor(self.position, self.params, self.multizone)
        if self.distance is None:
            self.distance, _ = fit_distance_model(self.radio_map)
        return Sensor(self.position, self.params, self.distance)

    def true_bits(self, points) -> np.ndarray:
        gain = self.radio_map.sample_gain(points)
        return self.params.bits_per_se * np.log1p(gain * self.params.snr_per_gain) / math.log(2.0)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "position": self.position.tolist(),
            "params": {"transmit_power": p.transmit_power, "noise_power": p.noise_power, "bandwidth": p.bandwidth, "slot": p.slot},
            "radio_map": self.radio_map.to_dict(),
            "multizone": None if self.multizone is None else self.multizone.to_dict(),
            "distance": None if self.distance is None else self.distance.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, walls: Sequence[WallSegment] = (), workspace=None) -> "SensorSpec":
        """Missing ``radio_map`` is rasterised from ``walls`` over ``workspace``;
        a ``zones`` list of vertex lists is fitted when no multi-zone model is given."""
        position = np.asarray(d["position"], dtype=float)
        if d.get("radio_map"):
            grid = RadioMapGrid.from_dict(d["radio_map"])
        else:
            if workspace is None:
                raise ValueError("sensor has no radio map and no workspace to generate one")
            x0, y0, x1, y1 = workspace
            w = int(round((x1 - x0) / MAP_RESOLUTION))
            h = int(round((y1 - y0) / MAP_RESOLUTION))
            radio = d.get("radio", {})
            grid = generate_radio_map(walls, position, (x0, y0), MAP_RESOLUTION, w, h,
                                      rho0=float(radio.get("rho0", 1e-3)), lam=float(radio.get("lam", 2.0)))
        if d.get("multizone"):
            mz = model_from_dict(d["multizone"])
        elif d.get("zones"):
            zones = [polytope_from_vertices(v) for v in d["zones"]]
            rho0 = d.get("radio", {}).get("rho0")
            mz = fit_multizone(grid, zones, FitConstraints(rho0=rho0))
        else:
            mz = None
        return cls(
            position=position,
            params=CommParams(**d.get("params", {})),
            radio_map=grid,
            multizone=mz,
            distance=model_from_dict(d["distance"]) if d.get("distance") else None,
        )


@dataclass(eq=False)
class Scenario:
    name: str
    workspace: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    start: Pose
    global_path: list[Pose]
    sensors: list[SensorSpec]
    walls: list[WallSegment] = field(default_factory=list)
    robot_body: ConvexPolytope = DEFAULT_BODY
    obstacles: list[Obstacle] = field(default_factory=list)
    min_megabytes: float = 0.0
    time_limit_seconds: float = 30.0
    goal_tolerance: float = 0.3
    seed: int = 0
    start_jitter: float = 0.0
    solid_walls: bool = True
    planner: dict = field(default_factory=dict)  # PlannerConfig defaults tuned for this task

    def __post_init__(self):
        if self.min_megabytes < 0:
            raise ValueError("min_megabytes must be non-negative")
        if len(self.global_path) < 1:
            raise ValueError("global path is empty")

    @property
    def goal(self) -> np.ndarray:
        return self.global_path[-1].position

    def all_obstacles(self) -> list[Obstacle]:
        walls = [wall_obstacle(w) for w in self.walls] if self.solid_walls else []
        return list(self.obstacles) + walls

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "workspace": list(self.workspace),
            "walls": [w.to_dict() for w in self.walls],
            "robot_body": self.robot_body.to_dict(),
            "start": [self.start.x, self.start.y, self.start.theta],
            "global_path": [[p.x, p.y, p.theta] for p in self.global_path],
            "obstacles": [o.to_dict() for o in self.obstacles],
            "sensors": [s.to_dict() for s in self.sensors],
            "task": {"min_megabytes": self.min_megabytes, "time_limit_seconds": self.time_limit_seconds},
            "goal_tolerance": self.goal_tolerance,
            "seed": self.seed,
            "start_jitter": self.start_jitter,
            "solid_walls": self.solid_walls,
            "planner": dict(self.planner),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        task = d.get("task", {})
        walls = [WallSegment.from_dict(w) for w in d.get("walls", [])]
        workspace = tuple(float(v) for v in d["workspace"])
        return cls(
            name=d["name"],
            workspace=workspace,
            start=Pose(*d["start"]),
            global_path=[Pose(*p) for p in d["global_path"]],
            sensors=[SensorSpec.from_dict(s, walls, workspace) for s in d.get("sensors", [])],
            walls=walls,
            robot_body=polytope_from_vertices(d["robot_body"]["vertices"]) if "robot_body" in d else DEFAULT_BODY,
            obstacles=[Obstacle.from_dict(o) for o in d.get("obstacles", [])],
            min_megabytes=float(task.get("min_megabytes", 0.0)),
            time_limit_seconds=float(task.get("time_limit_seconds", 30.0)),
            goal_tolerance=float(d.get("goal_tolerance", 0.3)),
            seed=int(d.get("seed", 0)),
            start_jitter=float(d.get("start_jitter", 0.0)),
            solid_walls=bool(d.get("solid_walls", True)),
            planner=dict(d.get("planner", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeResult:
    scenario: str
    label: str
    times: list[float]
    trajectory: list[Pose]
    controls: list[tuple[float, float]]
    per_step_bits: np.ndarray  # (steps, K)
    total_megabytes: float
    navigation_time: float
    rdg_efficiency: float
    min_clearance: float
    collided: bool
    reached_goal: bool
    success: bool
    planner_latency_stats: tuple[float, float]
    seed: int = 0
    failure: str | None = None
    fallback_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "label": self.label,
            "seed": self.seed,
            "trajectory": [[t, p.x, p.y, p.theta] for t, p in zip(self.times, self.trajectory)],
            "controls": [list(u) for u in self.controls],
            "per_step_bits": self.per_step_bits.tolist(),
            "total_megabytes": self.total_megabytes,
            "navigation_time": self.navigation_time,
            "rdg_efficiency": self.rdg_efficiency,
            "min_clearance": self.min_clearance,
            "collided": self.collided,
            "reached_goal": self.reached_goal,
            "success": self.success,
            "planner_latency_stats": {"median": self.planner_latency_stats[0], "p95": self.planner_latency_stats[1]},
            "failure": self.failure,
            "fallback_steps": self.fallback_steps,
        }


def exact_clearance(pose: Pose, robot_body: ConvexPolytope, obstacles: Sequence[tuple[object, Pose]]) -> float:
    """Smallest footprint-to-obstacle distance; ``1e9`` with no obstacles."""
    if not obstacles:
        return CLEARANCE_SENTINEL
    robot = transform_polytope(robot_body, pose)
    return min(shape_distance(robot, shape, opose)[0] for shape, opose in obstacles)


def _nearby(obstacles: Sequence[Obstacle], t: float, position, reach: float) -> list[Obstacle]:
    out = []
    for ob in obstacles:
        p = ob.pose_at(t)
        d = math.hypot(p.x - position[0], p.y - position[1]) - ob.shape.circumradius()
        if d <= reach + float(np.linalg.norm(ob.velocity_at(t)[:2])) * 2.0:
            out.append(ob)
    return out


def _brake(u_prev, limits: Limits) -> np.ndarray:
    u = np.asarray(u_prev, dtype=float)
    step = np.clip(-u, limits.a_min, limits.a_max)
    return np.clip(u + step, limits.u_min, limits.u_max)


def _start_pose(scenario: Scenario, seed: int) -> Pose:
    if scenario.start_jitter <= 0:
        return scenario.start
    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-scenario.start_jitter, scenario.start_jitter, size=2)
    return Pose(scenario.start.x + dx, scenario.start.y + dy, scenario.start.theta)


def run_episode(scenario: Scenario, config: PlannerConfig, label: str = "", seed: int | None = None) -> EpisodeResult:
    """Closed-loop run: collect, plan, apply the first control, advance the world."""
    seed = scenario.seed if seed is None else seed
    tau = config.tau
    sensors = [s.sensor_for(config.comm_mode) for s in scenario.sensors] if config.comm_aware else []
    obstacles = scenario.all_obstacles()
    planner = Planner(scenario.global_path, config, scenario.robot_body)
    reach = config.horizon * tau * max(abs(config.limits.u_max[0]), abs(config.limits.u_min[0])) \
        + scenario.robot_body.circumradius() + config.d_safe + 1.0
    pose = _start_pose(scenario, seed)
    t = 0.0
    times, traj, controls, bits, lat = [0.0], [pose], [], [], []
    u_prev = np.zeros(2)
    collided, reached = False, False
    fallback = 0
    goal = scenario.goal

    def obstacles_at(time_s):
        return [(o.shape, o.pose_at(time_s)) for o in obstacles]

    min_clear = exact_clearance(pose, scenario.robot_body, obstacles_at(0.0))
    n_steps = int(math.floor(scenario.time_limit_seconds / tau + 1e-9))
    for k in range(n_steps):
        if np.linalg.norm(pose.position - goal) <= scenario.goal_tolerance:
            reached = True
            break
        bits.append([s.true_bits(pose.position[None, :])[0] for s in scenario.sensors])
        near = _nearby(obstacles, t, pose.position, reach)
        predicted = [PredictedObstacle(o.shape, o.predict(t, config.horizon, tau)) for o in near]
        t0 = time.perf_counter()
        try:
            res = planner.plan(pose, sensors, predicted, u_prev=u_prev)
            u = res.controls[0]
        except (Infeasible, QPNumericalFailure) as exc:
            if k == 0:
                raise PlannerFailure(f"planning failed at the first step: {exc}") from exc
            log.info("step %d: %s; retrying without the safety margin", k, exc)
            try:
                res = planner.plan(pose, sensors, predicted, u_prev=u_prev, d_safe=0.0)
                u = res.controls[0]
            except (Infeasible, QPNumericalFailure):
                u = _brake(u_prev, config.limits)
                planner.reset()
            fallback += 1
        lat.append(time.perf_counter() - t0)
        pose = step_nonlinear(pose, u, tau)
        u_prev = np.asarray(u, dtype=float)
        t = (k + 1) * tau
        times.append(t)
        traj.append(pose)
        controls.append((float(u[0]), float(u[1])))
        clear = exact_clearance(pose, scenario.robot_body, obstacles_at(t))
        min_clear = min(min_clear, clear)
        if clear <= 0.0:
            collided = True
    else:
        reached = bool(np.linalg.norm(pose.position - goal) <= scenario.goal_tolerance)

    per_step = np.asarray(bits, dtype=float).reshape(-1, len(scenario.sensors))
    total_mb = float(per_step.sum()) / BITS_PER_MB
    nav = len(controls) * tau
    eff = total_mb / nav if nav > 0 else 0.0
    success = total_mb >= scenario.min_megabytes and reached and not collided and nav <= scenario.time_limit_seconds + 1e-9
    stats = (float(np.median(lat)), float(np.percentile(lat, 95))) if lat else (0.0, 0.0)
    return EpisodeResult(
        scenario=scenario.name, label=label, times=times, trajectory=traj, controls=controls,
        per_step_bits=per_step, total_megabytes=total_mb, navigation_time=nav, rdg_efficiency=eff,
        min_clearance=float(min_clear), collided=collided, reached_goal=reached, success=bool(success),
        planner_latency_stats=stats, seed=seed, fallback_steps=fallback,
    )


# --------------------------------------------------------------------------
# suites


METRICS = (("rdg_efficiency", "RDG Efficiency (MB/s)"), ("navigation_time", "Navigation Time (s)"),
           ("total_megabytes", "Data Throughput (MB)"))


@dataclass
class SuiteRow:
    scenario: str
    label: str
    episodes: list[EpisodeResult]
    means: dict[str, float]
    deltas: dict[str, float]
    success_rate: float
    collision_rate: float
    failed: int

    def cell(self, metric: str) -> str:
        v = self.means.get(metric, math.nan)
        if math.isnan(v):
            return "failed"
        d = self.deltas.get(metric)
        if d is None or math.isnan(d):
            return f"{v:.3f}"
        return f"{v:.3f} ({d:+.2f}%)"


def format_delta(value: float, reference: float) -> str:
    """``"0.371 (+14.86%)"`` style cell."""
    return f"{value:.3f} ({100.0 * (value - reference) / reference:+.2f}%)"


def _run_job(args):
    scenario, label, config, seed = args
    try:
        return run_episode(scenario, config, label=label, seed=seed)
    except PlannerFailure as exc:
        return exc.args[0] if exc.args else "planner failure"


def evaluate_suite(scenarios: Sequence[Scenario], configs: Sequence[tuple[str, PlannerConfig]], repeats: int = 1,
                   jobs: int = 1) -> list[SuiteRow]:
    """Every scenario under every config, ``repeats`` seeded times.

    Seeds are ``scenario.seed + repeat``.  Deltas are relative to the first
    config label of each scenario.
    """
    if not scenarios or not configs:
        raise ValueError("need at least one scenario and one config")
    tasks = [(sc, label, cfg, sc.seed + r) for sc in scenarios for label, cfg in configs for r in range(repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_job, tasks))
    else:
        outcomes = [_run_job(t) for t in tasks]
    rows = []
    i = 0
    for sc in scenarios:
        base = None
        for label, _ in configs:
            chunk = outcomes[i : i + repeats]
            i += repeats
            eps = [e for e in chunk if isinstance(e, EpisodeResult)]
            failed = repeats - len(eps)
            means = {m: (float(np.mean([getattr(e, m) for e in eps])) if eps else math.nan) for m, _ in METRICS}
            if base is None:
                base = means
                deltas = {m: math.nan for m, _ in METRICS}
            else:
                deltas = {m: (100.0 * (means[m] - base[m]) / base[m] if base[m] else math.nan) for m, _ in METRICS}
            rows.append(SuiteRow(
                scenario=sc.name, label=label, episodes=eps, means=means, deltas=deltas,
                success_rate=float(np.mean([e.success for e in eps])) if eps else 0.0,
                collision_rate=float(np.mean([e.collided for e in eps])) if eps else 0.0,
                failed=failed,
            ))
    return rows


def method_config(method: str, base: PlannerConfig = PlannerConfig()) -> PlannerConfig:
    return make_baseline(method, base)


def scenario_config(scenario: Scenario, method: str, overrides: dict | None = None) -> PlannerConfig:
    """``method`` settings on top of the scenario's planner defaults and ``overrides``."""
    return make_baseline(method, PlannerConfig(**{**scenario.planner, **(overrides or {})}))


def suite_csv(rows: Sequence[SuiteRow]) -> str:
    head = ["scenario", "method"] + [m for m, _ in METRICS] + [f"{m}_delta_pct" for m, _ in METRICS] + \
        ["success_rate", "collision_rate", "status"]
    lines = [",".join(head)]
    for r in rows:
        if r.failed and not r.episodes:
            vals = [""] * (2 * len(METRICS)) + ["", "", "failed"]
        else:
            vals = [f"{r.means[m]:.6f}" for m, _ in METRICS]
            vals += ["" if math.isnan(r.deltas[m]) else f"{r.deltas[m]:.2f}" for m, _ in METRICS]
            vals += [f"{r.success_rate:.3f}", f"{r.collision_rate:.3f}", "failed" if r.failed else "ok"]
        lines.append(",".join([r.scenario, r.label] + vals))
    return "\n".join(lines) + "\n"


def suite_markdown(rows: Sequence[SuiteRow]) -> str:
    head = "| Scenario | Method | " + " | ".join(t for _, t in METRICS) + " | Success |"
    sep = "|" + "---|" * (len(METRICS) + 3)
    lines = [head, sep]
    for r in rows:
        cells = [r.cell(m) for m, _ in METRICS]
        lines.append(f"| {r.scenario} | {r.label} | " + " | ".join(cells) + f" | {r.success_rate:.2f} |")
    return "\n".join(lines) + "\n"
