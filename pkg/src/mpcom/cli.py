"""Command-line entry point: ``mpcom <subcommand> ...``.

Subcommands: radio-generate, radio-fit, simulate, bench, plan-debug and
export-scenario.  ``--scenario`` takes a scenario JSON path or the name of a
built-in scenario.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import Circle, Pose, transform_polytope
from .planner import PlannerConfig, PredictedObstacle, extract_local_reference, mm_solve
from .radio import (
    EmptyZone,
    FitConstraints,
    InvalidGrid,
    RadioMapGrid,
    fit_distance_model,
    fit_multizone,
    generate_radio_map,
    model_rmse_db,
    segment_zones,
)
from .sim import (
    MAP_RESOLUTION,
    PlannerFailure,
    Scenario,
    evaluate_suite,
    run_episode,
    scenario_config,
    suite_csv,
    suite_markdown,
)

log = logging.getLogger("mpcom")

EXIT_OK = 0
EXIT_PLANNER = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_IO = 74

METHODS = ("mpcom", "rda", "pcamp", "sdcamp")
DB_RANGE = (-120.0, -20.0)

# viridis anchors, dark to bright
_RAMP = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# files


def _write(path: Path, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _manifest(args, out: Path, scenario_ref: str | None, overrides: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "manifest.json", _dump({
        "command": args.command,
        "scenario": scenario_ref,
        "overrides": overrides,
        "seed": args.seed,
        "output_dir": str(out),
        "version": __version__,
    }))


def load_scenario(ref: str) -> Scenario:
    from .scenarios import SCENARIOS

    path = Path(ref)
    if not path.exists() and ref in SCENARIOS:
        return SCENARIOS[ref]()
    if not path.exists():
        raise FileNotFoundError(f"no scenario file or built-in scenario named {ref!r}")
    try:
        return Scenario.load(path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot parse scenario {ref}: {exc}") from exc


def _load_grid(path: str) -> RadioMapGrid:
    with open(path) as fh:
        try:
            return RadioMapGrid.from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"cannot parse radio map {path}: {exc}") from exc


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("rho", "horizon", "tau") if getattr(args, k, None) is not None}


def _check_method(args) -> str:
    method = getattr(args, "method", "mpcom")
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return method


def _config(sc: Scenario, method: str, overrides: dict) -> PlannerConfig:
    try:
        return scenario_config(sc, method, overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# svg


def db_color(db: float) -> str:
    t = (min(max(db, DB_RANGE[0]), DB_RANGE[1]) - DB_RANGE[0]) / (DB_RANGE[1] - DB_RANGE[0])
    x = t * (len(_RAMP) - 1)
    i = min(int(x), len(_RAMP) - 2)
    c = _RAMP[i] + (x - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


class _Canvas:
    """World-to-pixel mapping with y pointing up."""

    def __init__(self, extent, scale=40.0, margin=20.0, legend=0.0):
        self.x0, self.y0, self.x1, self.y1 = extent
        self.s = scale
        self.m = margin
        w = (self.x1 - self.x0) * scale + 2 * margin + legend
        h = (self.y1 - self.y0) * scale + 2 * margin
        self.root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{w:.0f}", height=f"{h:.0f}",
                               viewBox=f"0 0 {w:.0f} {h:.0f}")
        self.legend_x = (self.x1 - self.x0) * scale + 2 * margin

    def px(self, x, y):
        return self.m + (x - self.x0) * self.s, self.m + (self.y1 - y) * self.s

    def add(self, tag, **attrs):
        return ET.SubElement(self.root, tag, {k.rstrip("_").replace("_", "-"): str(v) for k, v in attrs.items()})

    def polyline(self, pts, **attrs):
        d = " ".join("%.2f,%.2f" % self.px(x, y) for x, y in pts)
        return self.add("polyline", points=d, fill="none", **attrs)

    def text(self, x, y, s, **attrs):
        el = self.add("text", x=f"{x:.1f}", y=f"{y:.1f}", font_size=11, font_family="sans-serif", **attrs)
        el.text = s
        return el

    def tostring(self) -> str:
        return ET.tostring(self.root, encoding="unicode") + "\n"


def _heatmap(canvas: _Canvas, grid: RadioMapGrid, max_cells: int = 200) -> None:
    step = max(1, int(math.ceil(max(grid.width, grid.height) / max_cells)))
    db = grid.gains_db
    r = grid.resolution * step
    for i in range(0, grid.width, step):
        for j in range(0, grid.height, step):
            x = grid.origin[0] + i * grid.resolution
            y = grid.origin[1] + (j + step) * grid.resolution
            px, py = canvas.px(x, y)
            canvas.add("rect", x=f"{px:.2f}", y=f"{py:.2f}", width=f"{r * canvas.s + 0.3:.2f}",
                       height=f"{r * canvas.s + 0.3:.2f}", fill=db_color(float(db[i:i + step, j:j + step].mean())))


def _legend(canvas: _Canvas, height: float) -> None:
    x = canvas.legend_x
    n = 20
    h = (height - 40) / n
    for k in range(n):
        v = DB_RANGE[1] - (k + 0.5) * (DB_RANGE[1] - DB_RANGE[0]) / n
        canvas.add("rect", x=f"{x:.1f}", y=f"{20 + k * h:.2f}", width=14, height=f"{h + 0.3:.2f}", fill=db_color(v))
    canvas.text(x + 18, 28, f"{DB_RANGE[1]:.0f} dB")
    canvas.text(x + 18, height - 20, f"{DB_RANGE[0]:.0f} dB")


def heatmap_svg(grid: RadioMapGrid, walls=()) -> str:
    c = _Canvas(grid.extent(), legend=70)
    _heatmap(c, grid)
    _walls(c, walls)
    sx, sy = c.px(*grid.sensor)
    c.add("circle", cx=f"{sx:.2f}", cy=f"{sy:.2f}", r=5, fill="white", stroke="black")
    _legend(c, float(c.root.get("height")))
    return c.tostring()


def _walls(c: _Canvas, walls) -> None:
    for w in walls:
        c.polyline([w.a, w.b], stroke="black", stroke_width=3)


def trajectory_svg(scenario: Scenario, result) -> str:
    extent = scenario.workspace
    grid = scenario.sensors[0].radio_map if scenario.sensors else None
    c = _Canvas(extent, legend=70 if grid is not None else 0)
    if grid is not None:
        _heatmap(c, grid)
    _walls(c, scenario.walls)
    for ob in scenario.obstacles:
        p = ob.pose_at(0.0)
        if isinstance(ob.shape, Circle):
            cx, cy = c.px(p.x, p.y)
            c.add("circle", cx=f"{cx:.2f}", cy=f"{cy:.2f}", r=f"{ob.shape.radius * c.s:.2f}", fill="#888888")
        else:
            verts = transform_polytope(ob.shape, p).vertices
            c.add("polygon", points=" ".join("%.2f,%.2f" % c.px(*v) for v in verts), fill="#888888")
    for s in scenario.sensors:
        sx, sy = c.px(*s.position)
        c.add("circle", cx=f"{sx:.2f}", cy=f"{sy:.2f}", r=5, fill="white", stroke="black")
    c.polyline([(p.x, p.y) for p in scenario.global_path], stroke="white", stroke_width=1.5, stroke_dasharray="6,4")
    c.polyline([(p.x, p.y) for p in result.trajectory], stroke="#d62728", stroke_width=2)
    if grid is not None:
        _legend(c, float(c.root.get("height")))
    return c.tostring()


def speed_svg(result) -> str:
    t = np.asarray(result.times[: len(result.controls)], dtype=float)
    v = np.asarray([u[0] for u in result.controls], dtype=float)
    tmax = max(float(t[-1]) if len(t) else 1.0, 1e-6)
    vmax = max(float(np.abs(v).max()) if len(v) else 1.0, 1e-6)
    w, h, m = 480.0, 240.0, 40.0
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{w:.0f}", height=f"{h:.0f}",
                      viewBox=f"0 0 {w:.0f} {h:.0f}")

    def px(ti, vi):
        return m + ti / tmax * (w - 2 * m), h / 2 - vi / vmax * (h / 2 - m)

    ET.SubElement(root, "line", x1=str(m), y1=str(h / 2), x2=str(w - m), y2=str(h / 2), stroke="black")
    ET.SubElement(root, "line", x1=str(m), y1=str(m), x2=str(m), y2=str(h - m), stroke="black")
    if len(t):
        ET.SubElement(root, "polyline", fill="none", stroke="#1f77b4", points=" ".join(
            "%.2f,%.2f" % px(ti, vi) for ti, vi in zip(t, v)))
    for label, x, y in ((f"{tmax:.1f} s", w - m - 20, h / 2 + 14), (f"{vmax:.2f} m/s", 2, m - 4), ("speed", w / 2, 16)):
        el = ET.SubElement(root, "text", x=f"{x:.1f}", y=f"{y:.1f}", font_size="11", font_family="sans-serif")
        el.text = label
    return ET.tostring(root, encoding="unicode") + "\n"


# --------------------------------------------------------------------------
# commands


def cmd_radio_generate(args) -> int:
    sc = load_scenario(args.scenario)
    out = Path(args.out)
    _manifest(args, out, args.scenario, {})
    x0, y0, x1, y1 = sc.workspace
    w = int(round((x1 - x0) / MAP_RESOLUTION))
    h = int(round((y1 - y0) / MAP_RESOLUTION))
    for k, s in enumerate(sc.sensors):
        grid = generate_radio_map(sc.walls, s.position, (x0, y0), MAP_RESOLUTION, w, h)
        _write(out / f"radio_map_{k}.json", grid.dumps() + "\n")
        _write(out / f"radio_map_{k}.svg", heatmap_svg(grid, sc.walls))
        log.info("sensor %d: %dx%d cells", k, w, h)
    return EXIT_OK


def cmd_radio_fit(args) -> int:
    grid = _load_grid(args.map)
    out = Path(args.out)
    _manifest(args, out, args.scenario, {"zones": args.zones})
    if args.zones == "scenario":
        if not args.scenario:
            raise UsageError("--zones scenario needs --scenario")
        sc = load_scenario(args.scenario)
        match = [s for s in sc.sensors if s.multizone is not None and np.allclose(s.position, grid.sensor)]
        if not match:
            raise DataError("scenario has no zoned sensor at the map's sensor position")
        zones = match[0].multizone.zones
    else:
        zones = segment_zones(grid)
    try:
        mz = fit_multizone(grid, zones, FitConstraints(rho0=args.rho0))
    except EmptyZone as exc:
        print(f"error: empty zone {exc.zone_index}: {exc}", file=sys.stderr)
        return EXIT_DATA
    dist, _ = fit_distance_model(grid)
    _write(out / "multizone.json", _dump(mz.to_dict()))
    _write(out / "distance.json", _dump(dist.to_dict()))
    rows = [("multizone", model_rmse_db(grid, mz)), ("distance", model_rmse_db(grid, dist))]
    _write(out / "rmse.csv", "model,rmse_db\n" + "".join(f"{n},{v:.6f}\n" for n, v in rows))
    for n, v in rows:
        print(f"{n}: {v:.3f} dB")
    return EXIT_OK


def cmd_simulate(args) -> int:
    method, overrides = _check_method(args), _overrides(args)
    sc = load_scenario(args.scenario)
    config = _config(sc, method, overrides)
    out = Path(args.out)
    _manifest(args, out, args.scenario, {"method": args.method, **overrides})
    try:
        res = run_episode(sc, config, label=args.method, seed=args.seed)
    except PlannerFailure as exc:
        _write(out / "failure.txt", f"{exc}\n")
        print(f"planner failure: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    _write(out / "episode.json", _dump(res.to_dict()))
    _write(out / "trajectory.svg", trajectory_svg(sc, res))
    _write(out / "speed.svg", speed_svg(res))
    print(f"{args.method}: {res.total_megabytes:.3f} MB in {res.navigation_time:.1f} s, "
          f"success={res.success} collided={res.collided}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        with open(args.suite) as fh:
            suite = json.load(fh)
        refs = list(suite["scenarios"])
        methods = list(suite.get("methods", METHODS))
        repeats = int(suite.get("repeats", 1))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot parse suite {args.suite}: {exc}") from exc
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}")
    overrides = {**suite.get("overrides", {}), **_overrides(args)}
    out = Path(args.out)
    _manifest(args, out, args.suite, overrides)
    scenarios = [load_scenario(r) for r in refs]
    if args.seed is not None:
        for sc in scenarios:
            sc.seed = args.seed
    jobs = args.jobs or os.cpu_count() or 1
    rows = []
    for sc in scenarios:
        configs = [(m, _config(sc, m, overrides)) for m in methods]
        rows += evaluate_suite([sc], configs, repeats=repeats, jobs=jobs)
    _write(out / "results.csv", suite_csv(rows))
    _write(out / "results.md", suite_markdown(rows))
    print(suite_markdown(rows), end="")
    return EXIT_OK


def cmd_plan_debug(args) -> int:
    method, overrides = _check_method(args), _overrides(args)
    sc = load_scenario(args.scenario)
    config = _config(sc, method, overrides)
    out = Path(args.out)
    _manifest(args, out, args.scenario, {"method": args.method, **overrides})
    start = sc.start
    ref = extract_local_reference(sc.global_path, start, config.horizon, config.ref_speed * config.tau)
    sensors = [s.sensor_for(config.comm_mode) for s in sc.sensors]
    obstacles = [PredictedObstacle(o.shape, o.predict(0.0, config.horizon, config.tau)) for o in sc.all_obstacles()]
    res = mm_solve(Pose(start.x, start.y, start.theta), ref, sensors, obstacles, config, sc.robot_body)
    trace = [float(v) for v in res.objective_trace]
    monotone = all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))
    _write(out / "plan.json", _dump({**res.to_dict(), "monotone": monotone}))
    _write(out / "objective_trace.csv", "iteration,objective\n" + "".join(f"{i},{v:.12g}\n" for i, v in enumerate(trace)))
    print(f"{len(trace)} objective values, monotone={monotone}, status={res.status}")
    return EXIT_OK


def cmd_export_scenario(args) -> int:
    from .scenarios import SCENARIOS

    if args.name not in SCENARIOS:
        raise UsageError(f"unknown built-in scenario {args.name!r}; choose from {', '.join(SCENARIOS)}")
    sc = SCENARIOS[args.name](seed=args.seed or 0)
    _write(Path(args.out), sc.dumps() + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mpcom", description="Communication-aware trajectory planning tools.")
    p.add_argument("--version", action="version", version=f"mpcom {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, planner=False):
        sp.add_argument("--out", required=True, help="output directory (file for export-scenario)")
        sp.add_argument("--seed", type=int, default=None)
        if planner:
            sp.add_argument("--method", default="mpcom", help=f"one of {', '.join(METHODS)}")
            sp.add_argument("--rho", type=float)
            sp.add_argument("--horizon", type=int)
            sp.add_argument("--tau", type=float)

    sp = sub.add_parser("radio-generate", help="rasterise ground-truth radio maps for every sensor")
    sp.add_argument("--scenario", required=True)
    common(sp)
    sp.set_defaults(func=cmd_radio_generate)

    sp = sub.add_parser("radio-fit", help="fit multi-zone and distance models to a radio map")
    sp.add_argument("--map", required=True)
    sp.add_argument("--zones", choices=("scenario", "auto"), default="auto")
    sp.add_argument("--scenario")
    sp.add_argument("--rho0", type=float, default=None, help="pin the first zone's intercept")
    common(sp)
    sp.set_defaults(func=cmd_radio_fit)

    sp = sub.add_parser("simulate", help="run one episode")
    sp.add_argument("--scenario", required=True)
    common(sp, planner=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bench", help="run a scenario x method suite")
    sp.add_argument("--suite", required=True, help="JSON with scenarios, methods, repeats, overrides")
    sp.add_argument("--jobs", type=int, default=None)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--tau", type=float)
    common(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("plan-debug", help="one MM solve from the scenario start; dumps the objective trace")
    sp.add_argument("--scenario", required=True)
    common(sp, planner=True)
    sp.set_defaults(func=cmd_plan_debug)

    sp = sub.add_parser("export-scenario", help="write a built-in scenario as JSON")
    sp.add_argument("name")
    common(sp)
    sp.set_defaults(func=cmd_export_scenario)
    return p


def main(argv=None) -> int:
    level = os.environ.get("MPCOM_LOG", "warn").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InvalidGrid, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PlannerFailure as exc:
        print(f"planner failure: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
