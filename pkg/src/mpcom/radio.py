"""Synthetic radio maps, propagation models and their least-squares fits.

The ground-truth generator is a 2-D ray caster: free-space power decay from
the sensor, multiplied by the transmission factor of every wall the direct
ray crosses.  Two models are fitted to such maps:

* :class:`DistanceModel` -- a single ``rho0 * d**-lam`` law for the whole map;
* :class:`MultiZoneModel` -- one ``beta_l * d**-alpha_l`` law per convex zone,
  zone 1 being the line-of-sight region.

All fitting happens in dB, where both models are linear in ``10 log10 beta``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize_scalar

from .geometry import ConvexPolytope, contains_many, polytope_from_vertices

log = logging.getLogger(__name__)

D_MIN = 0.5
BETA_MIN = 1e-12
BETA_MAX = 1.0
LOS_ALPHA_RANGE = (2.0, 5.0)
NLOS_ALPHA_RANGE = (0.0, 8.0)
ALPHA_STEP = 0.01


class InvalidGrid(ValueError):
    pass


class OutsideAllZones(ValueError):
    pass


class EmptyZone(ValueError):
    def __init__(self, message: str, zone_index: int | None = None):
        super().__init__(message)
        self.zone_index = zone_index


@dataclass(frozen=True)
class WallSegment:
    a: tuple[float, float]
    b: tuple[float, float]
    transmission: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "a", (float(self.a[0]), float(self.a[1])))
        object.__setattr__(self, "b", (float(self.b[0]), float(self.b[1])))
        if self.a == self.b:
            raise ValueError("wall endpoints coincide")
        if not 0.0 < self.transmission <= 1.0:
            raise ValueError("wall transmission must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b), "transmission": self.transmission}

    @classmethod
    def from_dict(cls, d: dict) -> "WallSegment":
        return cls(tuple(d["a"]), tuple(d["b"]), float(d.get("transmission", 0.1)))


@dataclass(eq=False)
class RadioMapGrid:
    """Linear channel gain per cell for one sensor.

    ``gains[i, j]`` belongs to the cell whose centre is
    ``origin + resolution * (i + 0.5, j + 0.5)``; ``i`` runs along x.
    """

    origin: np.ndarray
    resolution: float
    gains: np.ndarray
    sensor: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.sensor = np.asarray(self.sensor, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float)
        if not self.resolution > 0:
            raise InvalidGrid("resolution must be positive")
        if self.gains.ndim != 2 or 0 in self.gains.shape:
            raise InvalidGrid("gain array must be a non-empty 2-D grid")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise InvalidGrid("gains must be finite and strictly positive")

    @property
    def width(self) -> int:
        return self.gains.shape[0]

    @property
    def height(self) -> int:
        return self.gains.shape[1]

    @property
    def gains_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.gains)

    def cell_centers(self) -> np.ndarray:
        """Array of shape ``(width, height, 2)``."""
        return _cell_centers(self.origin, self.resolution, self.width, self.height)

    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.width * self.resolution, y0 + self.height * self.resolution

    def sample_db(self, points) -> np.ndarray:
        """Bilinear interpolation of the dB field; clamps outside the grid."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        u = (p[:, 0] - self.origin[0]) / self.resolution - 0.5
        v = (p[:, 1] - self.origin[1]) / self.resolution - 0.5
        u = np.clip(u, 0.0, self.width - 1)
        v = np.clip(v, 0.0, self.height - 1)
        i0 = np.minimum(np.floor(u).astype(int), max(self.width - 2, 0))
        j0 = np.minimum(np.floor(v).astype(int), max(self.height - 2, 0))
        i1 = np.minimum(i0 + 1, self.width - 1)
        j1 = np.minimum(j0 + 1, self.height - 1)
        fu = u - i0
        fv = v - j0
        db = self.gains_db
        return (
            db[i0, j0] * (1 - fu) * (1 - fv)
            + db[i1, j0] * fu * (1 - fv)
            + db[i0, j1] * (1 - fu) * fv
            + db[i1, j1] * fu * fv
        )

    def sample_gain(self, points) -> np.ndarray:
        return 10.0 ** (self.sample_db(points) / 10.0)

    def to_dict(self) -> dict:
        return {
            "origin": [float(v) for v in self.origin],
            "resolution": float(self.resolution),
            "width": self.width,
            "height": self.height,
            "sensor": [float(v) for v in self.sensor],
            "gains_db": [round(float(v), 6) for v in self.gains_db.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RadioMapGrid":
        width, height = int(d["width"]), int(d["height"])
        db = np.asarray(d["gains_db"], dtype=float)
        if db.size != width * height:
            raise InvalidGrid(f"expected {width * height} gain values, got {db.size}")
        return cls(
            origin=np.asarray(d["origin"], dtype=float),
            resolution=float(d["resolution"]),
            gains=10.0 ** (db.reshape(width, height) / 10.0),
            sensor=np.asarray(d["sensor"], dtype=float),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class DistanceModel:
    rho0: float
    lam: float
    d_min: float = D_MIN

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")

    def zone_params(self, points):
        """Per-point ``(beta, alpha, inside)`` arrays; every point is covered."""
        n = len(np.atleast_2d(points))
        return np.full(n, self.rho0), np.full(n, self.lam), np.ones(n, dtype=bool)

    def gain(self, robot, sensor) -> float:
        return eval_los(self, robot, sensor)

    def to_dict(self) -> dict:
        return {"kind": "distance", "rho0": self.rho0, "lambda": self.lam, "d_min": self.d_min}


@dataclass(eq=False)
class MultiZoneModel:
    zones: list[ConvexPolytope]
    beta: list[float]
    alpha: list[float]
    sensor: np.ndarray
    d_min: float = D_MIN
    rmse_db: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.sensor = np.asarray(self.sensor, dtype=float)
        self.beta = [float(b) for b in self.beta]
        self.alpha = [float(a) for a in self.alpha]
        if not self.zones:
            raise ValueError("a multi-zone model needs at least one zone")
        if not len(self.zones) == len(self.beta) == len(self.alpha):
            raise ValueError("zones, beta and alpha must have equal length")
        if any(b <= 0 for b in self.beta):
            raise ValueError("zone gains must be positive")
        lo, hi = LOS_ALPHA_RANGE
        if not lo - 1e-9 <= self.alpha[0] <= hi + 1e-9:
            raise ValueError(f"LOS exponent {self.alpha[0]} outside [{lo}, {hi}]")

    def zone_index(self, point) -> int:
        """Index of the governing zone (lowest containing index), or -1."""
        return int(self.zone_indices(np.atleast_2d(point))[0])

    def zone_indices(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        idx = np.full(len(p), -1, dtype=int)
        for l in range(len(self.zones) - 1, -1, -1):
            idx[contains_many(self.zones[l], p)] = l
        return idx

    def zone_params(self, points):
        idx = self.zone_indices(points)
        inside = idx >= 0
        safe = np.where(inside, idx, 0)
        return np.asarray(self.beta)[safe], np.asarray(self.alpha)[safe], inside

    def gain(self, robot, sensor) -> float:
        return eval_multizone(self, robot, sensor)

    def to_dict(self) -> dict:
        return {
            "kind": "multizone",
            "zones": [z.to_dict() for z in self.zones],
            "beta": self.beta,
            "alpha": self.alpha,
            "sensor": self.sensor.tolist(),
            "d_min": self.d_min,
            "rmse_db": self.rmse_db,
        }


def model_from_dict(d: dict):
    if d["kind"] == "distance":
        return DistanceModel(float(d["rho0"]), float(d["lambda"]), float(d.get("d_min", D_MIN)))
    if d["kind"] == "multizone":
        return MultiZoneModel(
            zones=[ConvexPolytope.from_dict(z) for z in d["zones"]],
            beta=d["beta"],
            alpha=d["alpha"],
            sensor=np.asarray(d["sensor"], dtype=float),
            d_min=float(d.get("d_min", D_MIN)),
            rmse_db=list(d.get("rmse_db", [])),
        )
    raise ValueError(f"unknown model kind {d['kind']!r}")


# --------------------------------------------------------------------------
# ground-truth generator


def _cell_centers(origin, resolution, width, height) -> np.ndarray:
    xs = origin[0] + (np.arange(width) + 0.5) * resolution
    ys = origin[1] + (np.arange(height) + 0.5) * resolution
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X, Y], axis=-1)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def wall_transmission(walls: Sequence[WallSegment], sensor, points) -> np.ndarray:
    """Product of transmissions of walls properly crossed by ``sensor -> point``.

    Touching a wall at an endpoint, or running along it, does not count.
    """
    p = np.asarray(points, dtype=float)
    shape = p.shape[:-1]
    p = p.reshape(-1, 2)
    sx, sy = float(sensor[0]), float(sensor[1])
    out = np.ones(len(p))
    for w in walls:
        (ax, ay), (bx, by) = w.a, w.b
        o1 = _orient(sx, sy, p[:, 0], p[:, 1], ax, ay)
        o2 = _orient(sx, sy, p[:, 0], p[:, 1], bx, by)
        o3 = _orient(ax, ay, bx, by, sx, sy)
        o4 = _orient(ax, ay, bx, by, p[:, 0], p[:, 1])
        crossed = (o1 * o2 < 0) & (o3 * o4 < 0)
        out[crossed] *= w.transmission
    return out.reshape(shape)


def generate_radio_map(
    walls: Sequence[WallSegment],
    sensor,
    origin,
    resolution: float,
    width: int,
    height: int,
    rho0: float = 1e-3,
    lam: float = 2.0,
    d_min: float = D_MIN,
) -> RadioMapGrid:
    """Rasterise ``rho0 * max(d, d_min)**-lam * prod(wall transmissions)``."""
    if width <= 0 or height <= 0:
        raise InvalidGrid("grid must have at least one cell in each direction")
    if not rho0 > 0:
        raise ValueError("rho0 must be positive")
    if not 2.0 <= lam <= 5.0:
        raise ValueError("path-loss exponent must lie in [2, 5]")
    if not d_min > 0:
        raise ValueError("d_min must be positive")
    origin = np.asarray(origin, dtype=float)
    sensor = np.asarray(sensor, dtype=float)
    centers = _cell_centers(origin, resolution, width, height)
    d = np.maximum(np.linalg.norm(centers - sensor, axis=-1), d_min)
    gains = rho0 * d ** (-lam) * wall_transmission(walls, sensor, centers)
    return RadioMapGrid(origin=origin, resolution=float(resolution), gains=gains, sensor=sensor)


# --------------------------------------------------------------------------
# evaluation


def eval_los(model: DistanceModel, robot, sensor) -> float:
    d = float(np.linalg.norm(np.asarray(robot, dtype=float)[:2] - np.asarray(sensor, dtype=float)[:2]))
    return model.rho0 * max(d, model.d_min) ** (-model.lam)


def eval_multizone(model: MultiZoneModel, robot, sensor) -> float:
    p = np.asarray(robot, dtype=float)[:2]
    l = model.zone_index(p)
    if l < 0:
        raise OutsideAllZones(f"point {p.tolist()} lies outside every zone")
    d = float(np.linalg.norm(p - np.asarray(sensor, dtype=float)[:2]))
    return model.beta[l] * max(d, model.d_min) ** (-model.alpha[l])


def model_gain_many(model, points, sensor) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised model gains; returns ``(gain, inside)`` with gain 0 outside."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    beta, alpha, inside = model.zone_params(p)
    d = np.maximum(np.linalg.norm(p - np.asarray(sensor, dtype=float)[:2], axis=1), model.d_min)
    return np.where(inside, beta * d ** (-alpha), 0.0), inside


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitConstraints:
    beta_min: float = BETA_MIN
    beta_max: float = BETA_MAX
    los_alpha_range: tuple[float, float] = LOS_ALPHA_RANGE
    nlos_alpha_range: tuple[float, float] = NLOS_ALPHA_RANGE
    rho0: float | None = None
    d_min: float = D_MIN


def _grid_objective(alphas, y, L, B_lo, B_hi, B_fixed):
    """Mean squared dB error for each candidate exponent, and the best offsets.

    The model is ``y ~ B - alpha * L`` with ``L = 10 log10 d``.
    """
    alphas = np.atleast_1d(alphas)
    r = y[None, :] + alphas[:, None] * L[None, :]
    mean_r = r.mean(axis=1)
    B = np.full_like(mean_r, B_fixed) if B_fixed is not None else np.clip(mean_r, B_lo, B_hi)
    obj = np.mean((r - B[:, None]) ** 2, axis=1)
    return obj, B


def _fit_cells(y_db, dist, alpha_range, beta_range, beta_fixed=None, step=ALPHA_STEP):
    lo, hi = float(alpha_range[0]), float(alpha_range[1])
    if hi < lo:
        raise ValueError("empty exponent range")
    y = np.asarray(y_db, dtype=float)
    L = 10.0 * np.log10(dist)
    B_lo, B_hi = 10.0 * np.log10(beta_range[0]), 10.0 * np.log10(beta_range[1])
    B_fixed = None if beta_fixed is None else 10.0 * np.log10(beta_fixed)
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n)
    if grid[-1] < hi - 1e-12:
        grid = np.append(grid, hi)
    obj, B = _grid_objective(grid, y, L, B_lo, B_hi, B_fixed)
    k = int(np.argmin(obj))
    alpha, best = float(grid[k]), float(obj[k])
    if hi > lo:
        a, b = max(lo, alpha - step), min(hi, alpha + step)
        res = minimize_scalar(
            lambda a_: float(_grid_objective(a_, y, L, B_lo, B_hi, B_fixed)[0][0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-7},
        )
        if res.fun < best:
            alpha, best = float(res.x), float(res.fun)
    _, Bs = _grid_objective(alpha, y, L, B_lo, B_hi, B_fixed)
    return 10.0 ** (float(Bs[0]) / 10.0), alpha, float(np.sqrt(max(best, 0.0)))


def _cells(grid: RadioMapGrid, d_min: float):
    c = grid.cell_centers().reshape(-1, 2)
    d = np.maximum(np.linalg.norm(c - grid.sensor, axis=1), d_min)
    return c, d, grid.gains_db.ravel()


def fit_zone(
    grid: RadioMapGrid,
    zone: ConvexPolytope,
    alpha_range=NLOS_ALPHA_RANGE,
    beta_range=(BETA_MIN, BETA_MAX),
    beta_fixed: float | None = None,
    d_min: float = D_MIN,
    mask: np.ndarray | None = None,
):
    """Fit ``(beta, alpha)`` over the cells whose centres lie in ``zone``.

    Returns ``(beta, alpha, rmse_db)``.  ``mask`` (flattened cell order)
    further restricts the cells used.
    """
    c, d, y = _cells(grid, d_min)
    sel = contains_many(zone, c)
    if mask is not None:
        sel &= mask
    if sel.sum() < 10:
        raise EmptyZone(f"zone holds {int(sel.sum())} cells, need at least 10")
    return _fit_cells(y[sel], d[sel], alpha_range, beta_range, beta_fixed)


def fit_multizone(
    grid: RadioMapGrid,
    zones: Sequence[ConvexPolytope],
    constraints: FitConstraints = FitConstraints(),
) -> MultiZoneModel:
    """Fit every zone independently on the cells it governs (lowest index wins)."""
    if not zones:
        raise ValueError("need at least one zone")
    c, _, _ = _cells(grid, constraints.d_min)
    owner = np.full(len(c), -1, dtype=int)
    for l in range(len(zones) - 1, -1, -1):
        owner[contains_many(zones[l], c)] = l
    betas, alphas, errs = [], [], []
    for l, zone in enumerate(zones):
        los = l == 0
        try:
            beta, alpha, err = fit_zone(
                grid,
                zone,
                alpha_range=constraints.los_alpha_range if los else constraints.nlos_alpha_range,
                beta_range=(constraints.beta_min, constraints.beta_max),
                beta_fixed=constraints.rho0 if los else None,
                d_min=constraints.d_min,
                mask=owner == l,
            )
        except EmptyZone as exc:
            raise EmptyZone(f"zone {l + 1}: {exc}", zone_index=l + 1) from exc
        betas.append(beta)
        alphas.append(alpha)
        errs.append(err)
        log.debug("zone %d: beta=%.3e alpha=%.3f rmse=%.3f dB", l + 1, beta, alpha, err)
    return MultiZoneModel(list(zones), betas, alphas, grid.sensor.copy(), constraints.d_min, errs)


def fit_distance_model(
    grid: RadioMapGrid,
    alpha_range=LOS_ALPHA_RANGE,
    beta_range=(BETA_MIN, BETA_MAX),
    d_min: float = D_MIN,
    mask: np.ndarray | None = None,
):
    """Single ``rho0 * d**-lam`` fit over all cells; returns ``(model, rmse_db)``."""
    _, d, y = _cells(grid, d_min)
    if mask is not None:
        d, y = d[mask], y[mask]
    rho0, lam, err = _fit_cells(y, d, alpha_range, beta_range)
    return DistanceModel(rho0, lam, d_min), err


def model_rmse_db(grid: RadioMapGrid, model, mask: np.ndarray | None = None) -> float:
    """RMSE in dB of ``model`` against the map over covered cells."""
    c, _, y = _cells(grid, model.d_min)
    g, inside = model_gain_many(model, c, grid.sensor)
    sel = inside if mask is None else inside & mask
    if not sel.any():
        raise EmptyZone("model covers no cells")
    return float(np.sqrt(np.mean((y[sel] - 10.0 * np.log10(g[sel])) ** 2)))


def segment_zones(
    grid: RadioMapGrid,
    level_width_db: float = 6.0,
    min_region_cells: int = 10,
    d_min: float = D_MIN,
) -> list[ConvexPolytope]:
    """Zones from banded residuals of the best single distance-model fit.

    Residuals are rounded to multiples of ``level_width_db``; each 4-connected
    region of equal band becomes an axis-aligned rectangle.  The region that
    holds the sensor comes first, the rest follow by decreasing size.
    """
    if not level_width_db > 0:
        raise ValueError("level_width_db must be positive")
    model, _ = fit_distance_model(grid, d_min=d_min)
    c = grid.cell_centers()
    d = np.maximum(np.linalg.norm(c - grid.sensor, axis=-1), d_min)
    resid = grid.gains_db - 10.0 * np.log10(model.rho0 * d ** (-model.lam))
    bands = np.round(resid / level_width_db).astype(int)
    structure = ndimage.generate_binary_structure(2, 1)
    regions = []
    for band in np.unique(bands):
        labels, count = ndimage.label(bands == band, structure=structure)
        for k in range(1, count + 1):
            cells = np.argwhere(labels == k)
            if len(cells) >= min_region_cells:
                regions.append(cells)
    si = np.floor((grid.sensor - grid.origin) / grid.resolution).astype(int)

    def key(cells):
        has_sensor = bool(np.any(np.all(cells == si, axis=1)))
        return (not has_sensor, -len(cells), cells[0, 0], cells[0, 1])

    zones = []
    r = grid.resolution
    for cells in sorted(regions, key=key):
        (i0, j0), (i1, j1) = cells.min(axis=0), cells.max(axis=0)
        x0, y0 = grid.origin + r * np.array([i0, j0])
        x1, y1 = grid.origin + r * np.array([i1 + 1, j1 + 1])
        zones.append(polytope_from_vertices([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]))
    return zones
