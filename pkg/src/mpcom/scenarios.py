"""Built-in desk-scale environments: radio-map layouts and navigation tasks."""
from __future__ import annotations

import math

import numpy as np

from .comm import CommParams
from .geometry import Circle, ConvexPolytope, Pose, polytope_from_vertices
from .radio import FitConstraints, RadioMapGrid, WallSegment, fit_distance_model, fit_multizone, generate_radio_map
from .sim import Obstacle, Scenario, SensorSpec

RHO0 = 1e-3
LAMBDA = 2.0
RESOLUTION = 0.1
WALL_LOSS = 0.01
HEAVY_WALL_LOSS = 0.003  # about -25 dB per wall


def box(x0, y0, x1, y1) -> ConvexPolytope:
    return polytope_from_vertices([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _grid(walls, sensor, extent, resolution=RESOLUTION) -> RadioMapGrid:
    x0, y0, x1, y1 = extent
    w = int(round((x1 - x0) / resolution))
    h = int(round((y1 - y0) / resolution))
    return generate_radio_map(walls, sensor, (x0, y0), resolution, w, h, rho0=RHO0, lam=LAMBDA)


# --------------------------------------------------------------------------
# radio-map layouts: (walls, sensor, extent, zones)


def wide_open_layout():
    extent = (0.0, 0.0, 12.0, 8.0)
    return [], (6.0, 4.0), extent, [box(*extent)]


def t_junction_layout(length=16.0, junction=(7.0, 9.0), top=7.0, sensor=(8.0, 5.0), loss=WALL_LOSS):
    """Hallway ``y in [-1.5, 1.5]`` with a dead-end side corridor above a T junction."""
    ja, jb = junction
    walls = [
        WallSegment((0.0, -1.5), (length, -1.5), loss),
        WallSegment((0.0, 1.5), (ja, 1.5), loss),
        WallSegment((jb, 1.5), (length, 1.5), loss),
        WallSegment((ja, 1.5), (ja, top), loss),
        WallSegment((jb, 1.5), (jb, top), loss),
        WallSegment((ja, top), (jb, top), loss),
        WallSegment((0.0, -1.5), (0.0, 1.5), loss),
        WallSegment((length, -1.5), (length, 1.5), loss),
    ]
    extent = (0.0, -1.5, length, top)
    sx, sy = sensor
    # visibility wedge through the junction opening, clipped at the far hallway wall
    k = (-1.5 - sy)
    xa = sx + (ja - sx) * k / (1.5 - sy)
    xb = sx + (jb - sx) * k / (1.5 - sy)
    zones = [
        box(ja, 1.5, jb, top),
        polytope_from_vertices([(ja, 1.5), (jb, 1.5), (xb, -1.5), (xa, -1.5)]),
        box(0.0, -1.5, length, 1.5),
        box(*extent),
    ]
    return walls, sensor, extent, zones


def room_layout(loss=WALL_LOSS):
    """Closed room with a doorway in its lower wall; the sensor sits inside."""
    rx0, ry0, rx1, ry1 = 3.0, 3.0, 9.0, 7.0
    door = (5.5, 6.5)
    walls = [
        WallSegment((rx0, ry0), (door[0], ry0), loss),
        WallSegment((door[1], ry0), (rx1, ry0), loss),
        WallSegment((rx1, ry0), (rx1, ry1), loss),
        WallSegment((rx1, ry1), (rx0, ry1), loss),
        WallSegment((rx0, ry1), (rx0, ry0), loss),
    ]
    extent = (0.0, 0.0, 12.0, 10.0)
    sensor = (6.0, 5.5)
    zones = [box(rx0, ry0, rx1, ry1), box(*extent)]
    return walls, sensor, extent, zones


def _clip(vertices, normal, bound):
    """Part of a convex polygon with ``normal . p <= bound``."""
    out = []
    n = len(vertices)
    for i in range(n):
        p, q = np.asarray(vertices[i]), np.asarray(vertices[(i + 1) % n])
        fp, fq = normal @ p - bound, normal @ q - bound
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            out.append(p + (q - p) * fp / (fp - fq))
    return out


def visibility_wedge(sensor, a, b, region) -> ConvexPolytope:
    """Points of ``region`` seen from ``sensor`` through the opening ``a``-``b``."""
    z, a, b = (np.asarray(v, dtype=float) for v in (sensor, a, b))
    poly = [np.asarray(v) for v in region.vertices]
    for p, q, inside in ((a, b, z), (z, a, b), (z, b, a)):
        d = q - p
        n = np.array([d[1], -d[0]])
        # keep the side of line p-q away from ``inside`` for the opening, towards it for the rays
        sign = 1.0 if n @ (inside - p) > 0 else -1.0
        if p is a:
            poly = _clip(poly, sign * n, sign * n @ p)
        else:
            poly = _clip(poly, -sign * n, -sign * n @ p)
    return polytope_from_vertices(poly)


def side_room_layout(length=16.0, half_width=1.25, room=(3.0, 12.0, 4.5), door=(9.0, 12.0), sensor=(6.5, 3.0),
                     loss=WALL_LOSS):
    """Hallway with a room along its upper side; the room's doorway lies past the sensor."""
    rx0, rx1, rtop = room
    da, db = door
    hw = half_width
    walls = [
        WallSegment((0.0, -hw), (length, -hw), loss),
        WallSegment((0.0, hw), (da, hw), loss),
        WallSegment((db, hw), (length, hw), loss),
        WallSegment((rx0, hw), (rx0, rtop), loss),
        WallSegment((rx0, rtop), (rx1, rtop), loss),
        WallSegment((rx1, rtop), (rx1, hw), loss),
        WallSegment((0.0, -hw), (0.0, hw), loss),
        WallSegment((length, -hw), (length, hw), loss),
    ]
    extent = (0.0, -hw, length, rtop)
    hall = box(0.0, -hw, length, hw)
    zones = [
        box(rx0, hw, rx1, rtop),
        visibility_wedge(sensor, (da, hw), (db, hw), hall),
        hall,
        box(*extent),
    ]
    return walls, sensor, extent, zones


LAYOUTS = {"wide-open": wide_open_layout, "corridor": t_junction_layout, "room": room_layout}


def layout_map(name: str) -> tuple[RadioMapGrid, list[ConvexPolytope], list[WallSegment]]:
    walls, sensor, extent, zones = LAYOUTS[name]()
    return _grid(walls, sensor, extent), zones, walls


def make_sensor(walls, sensor, extent, zones, params: CommParams | None = None) -> SensorSpec:
    """Ground-truth map plus both fitted models for one sensor."""
    grid = _grid(walls, sensor, extent)
    mz = fit_multizone(grid, zones, FitConstraints(rho0=RHO0))
    dist, _ = fit_distance_model(grid)
    return SensorSpec(np.asarray(sensor, dtype=float), params or CommParams(), grid, mz, dist)


# --------------------------------------------------------------------------
# navigation tasks


def _arc_path(center, radius, a0, a1, n):
    cx, cy = center
    out = []
    for a in np.linspace(a0, a1, n):
        heading = a + math.copysign(math.pi / 2, a1 - a0)
        out.append(Pose(cx + radius * math.cos(a), cy + radius * math.sin(a), heading))
    return out


def los_scenario(seed: int = 0, n_obstacles: int = 8, moving: bool = False) -> Scenario:
    """Half-circle route around a sensor placed inside the curve, with circular obstacles."""
    center = (6.0, 5.0)
    radius = 4.0
    path = _arc_path(center, radius, -math.pi / 2, math.pi / 2, 91)
    sensor = (7.5, 5.0)
    extent = (0.0, 0.0, 12.0, 10.0)
    zones = [box(*extent)]
    spec = make_sensor([], sensor, extent, zones)
    # obstacles off the route, mostly outside the curve and a few between route and sensor
    placements = [
        (-1.05, 1.2), (-0.6, -1.0), (-0.15, 1.1), (0.3, -1.15),
        (0.75, 1.25), (1.15, -1.0), (-0.35, -2.3), (0.55, -2.4),
    ][:n_obstacles]
    obstacles = []
    for i, (ang, off) in enumerate(placements):
        r = radius + off
        p = Pose(center[0] + r * math.cos(ang), center[1] + r * math.sin(ang), 0.0)
        if moving and i % 2 == 0:
            q = Pose(p.x + 0.3 * math.cos(ang), p.y + 0.3 * math.sin(ang), 0.0)
            script = ((0.0, p), (10.0, q), (20.0, p))
        else:
            script = ((0.0, p),)
        obstacles.append(Obstacle(Circle(0.3), script))
    return Scenario(
        name="los-arc" + ("-moving" if moving else ""),
        workspace=extent,
        start=path[0],
        global_path=path,
        sensors=[spec],
        obstacles=obstacles,
        min_megabytes=0.0,
        time_limit_seconds=30.0,
        seed=seed,
        start_jitter=0.05,
    )


def nlos_corridor_scenario(seed: int = 0, min_megabytes: float = 0.18) -> Scenario:
    """Hallway past a side room; the sensor inside is reachable in LOS only through the doorway."""
    walls, sensor, extent, zones = side_room_layout(loss=HEAVY_WALL_LOSS)
    spec = make_sensor(walls, sensor, extent, zones)
    path = [Pose(x, 0.0, 0.0) for x in np.linspace(1.0, 15.0, 57)]
    return Scenario(
        name="nlos-corridor",
        workspace=extent,
        start=path[0],
        global_path=path,
        sensors=[spec],
        walls=walls,
        obstacles=[],
        min_megabytes=min_megabytes,
        time_limit_seconds=30.0,
        seed=seed,
        start_jitter=0.05,
        planner={"rho": 10.0, "max_lead": 3.0},
    )


SCENARIOS = {"los-arc": los_scenario, "nlos-corridor": nlos_corridor_scenario}
