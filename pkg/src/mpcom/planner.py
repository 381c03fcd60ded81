"""Communication-aware MPC solved by majorization-minimization.

Each planning call minimises

    tracking(s) - rho * sum_{h,k} phi_k(s_h) / unit

over an ``H``-step horizon subject to unicycle dynamics, actuation boxes and
collision constraints.  ``phi_k`` is the per-slot harvested bits from sensor
``k``; ``unit`` (``PlannerConfig.utility_unit_bits``) fixes the scale on which
``rho`` trades metres against bits.

The outer loop freezes, at the current iterate (the *anchor*): the zone of
every predicted state, the dynamics linearisation, and one separating line per
(obstacle, step).  The concave log surrogate of each utility term is further
minorised by a concave quadratic whose curvature is found by doubling until it
under-estimates the surrogate at the returned point, so every subproblem is a
strictly convex QP in the controls.  Candidate controls are rolled out through
the nonlinear model and accepted only if the true objective does not increase.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .comm import Sensor, surrogate_terms, utility_many
from .dynamics import Control, Limits, linearize_along, poses_from_states, rollout
from .geometry import (
    Circle,
    ConvexPolytope,
    Pose,
    batch_polygon_circle_distance,
    batch_polygon_distance,
    penetration_direction,
    rectangle,
    wrap_angle,
)
from .qp import Infeasible, QPNumericalFailure, solve_qp

log = logging.getLogger(__name__)

DEFAULT_BODY = rectangle(0.8, 0.5)

COMM_MODES = ("multizone", "distance", "none")
COLLISION_MODES = ("polytope", "point_mass")


class EmptyPath(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class ReferenceInCollision(ValueError):
    def __init__(self, m: int, h: int):
        super().__init__(f"reference pose {h} intersects obstacle {m}")
        self.m, self.h = m, h


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    tau: float = 0.1
    rho: float = 0.5
    eta: float = 0.1
    d_safe: float = 0.1
    limits: Limits = Limits()
    mm_max_iters: int = 15
    mm_tol: float = 1e-4
    comm_mode: str = "multizone"
    collision_mode: str = "polytope"
    trust_radius: float = 0.5
    qp_tol: float = 1e-6
    ref_speed: float = 0.8
    utility_unit_bits: float = 1e4
    control_reg: float = 1e-6
    max_lead: float = 1.0
    heading_margin: float = 0.1
    goal_weight: float = 10.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.rho < 0 or self.eta < 0:
            raise ValueError("rho and eta must be non-negative")
        if self.d_safe < 0:
            raise ValueError("d_safe must be non-negative")
        if self.mm_max_iters < 1:
            raise ValueError("mm_max_iters must be at least 1")
        if self.comm_mode not in COMM_MODES:
            raise ValueError(f"comm_mode must be one of {COMM_MODES}")
        if self.collision_mode not in COLLISION_MODES:
            raise ValueError(f"collision_mode must be one of {COLLISION_MODES}")
        if self.goal_weight < 1:
            raise ValueError("goal_weight must be at least 1")
        if self.max_lead < 0:
            raise ValueError("max_lead must be non-negative")
        if not (self.tau > 0 and self.trust_radius > 0 and self.utility_unit_bits > 0):
            raise ValueError("tau, trust_radius and utility_unit_bits must be positive")

    @property
    def comm_aware(self) -> bool:
        return self.rho > 0 and self.comm_mode != "none"

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "limits"}
        d["limits"] = self.limits.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        if "limits" in d:
            d["limits"] = Limits.from_dict(d["limits"])
        return cls(**d)


def make_baseline(kind: str, base: PlannerConfig = PlannerConfig()) -> PlannerConfig:
    """Planner settings for the compared schemes.

    ``rda`` ignores communication; ``pcamp`` and ``sdcamp`` use the single
    distance law (point-mass vs shape-aware collision); ``mpcom`` uses the
    multi-zone map with shape-aware collision.
    """
    rho = base.rho if base.rho > 0 else PlannerConfig.rho
    if kind == "rda":
        return replace(base, rho=0.0, collision_mode="polytope")
    if kind == "pcamp":
        return replace(base, rho=rho, comm_mode="distance", collision_mode="point_mass")
    if kind == "sdcamp":
        return replace(base, rho=rho, comm_mode="distance", collision_mode="polytope")
    if kind == "mpcom":
        return replace(base, rho=rho, comm_mode="multizone", collision_mode="polytope")
    raise ValueError(f"unknown planner kind {kind!r}")


@dataclass(frozen=True)
class ReferenceWindow:
    states: np.ndarray  # (H + 1, 3)
    arc_start: float = 0.0
    weights: np.ndarray | None = None  # per-step tracking weights, ones by default

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3 or len(s) < 2:
            raise ValueError("reference window needs at least two 3-D states")
        object.__setattr__(self, "states", s)
        w = np.ones(len(s)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (len(s),) or np.any(w < 0):
            raise ValueError("weights must be one non-negative value per reference state")
        object.__setattr__(self, "weights", w)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def poses(self) -> list[Pose]:
        return poses_from_states(self.states)


@dataclass(frozen=True)
class PredictedObstacle:
    """Obstacle shape with one predicted pose per horizon step (``(H + 1, 3)``)."""

    shape: ConvexPolytope | Circle
    poses: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "poses", np.asarray(self.poses, dtype=float).reshape(-1, 3))


@dataclass(frozen=True)
class HalfPlanes:
    """Linear constraints ``normal[i] . p_{step[i]} <= bound[i]`` on robot centres."""

    step: np.ndarray
    normal: np.ndarray
    bound: np.ndarray
    obstacle: np.ndarray

    @classmethod
    def empty(cls) -> "HalfPlanes":
        return cls(np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.bound)

    def slack(self, states) -> np.ndarray:
        """``bound - normal . p``; non-negative when satisfied."""
        p = np.asarray(states, dtype=float)[self.step, :2]
        return self.bound - np.einsum("ij,ij->i", self.normal, p)


@dataclass
class PlanResult:
    states: np.ndarray  # (H + 1, 3), headings unwrapped
    controls: np.ndarray  # (H, 2)
    objective_trace: list[float] = field(default_factory=list)
    cost_breakdown: tuple[float, float] = (0.0, 0.0)
    mm_iterations: int = 0
    status: str = "Converged"
    qp_objective: float | None = None
    kkt_residual: float = 0.0
    minorant: np.ndarray | None = None  # (H + 1, K) quadratic minorant at returned states
    surrogate: np.ndarray | None = None  # (H + 1, K) log surrogate at returned states
    constraints: HalfPlanes | None = None

    @property
    def poses(self) -> list[Pose]:
        return poses_from_states(self.states)

    @property
    def control_list(self) -> list[Control]:
        return [Control(float(v), float(w)) for v, w in self.controls]

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else math.nan

    def to_dict(self) -> dict:
        return {
            "states": [[float(x), float(y), float(wrap_angle(t))] for x, y, t in self.states],
            "controls": self.controls.tolist(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "cost_breakdown": {"tracking": self.cost_breakdown[0], "communication": self.cost_breakdown[1]},
            "mm_iterations": self.mm_iterations,
            "status": self.status,
        }


# --------------------------------------------------------------------------
# reference extraction and costs


def _as_state_array(path) -> np.ndarray:
    rows = []
    for p in path:
        if isinstance(p, Pose):
            rows.append((p.x, p.y, p.theta))
        else:
            rows.append(tuple(float(v) for v in p) + ((0.0,) if len(p) == 2 else ()))
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _project_on_path(W: np.ndarray, cum: np.ndarray, point, lo: float = -math.inf, hi: float = math.inf) -> float:
    a, b = W[:-1, :2], W[1:, :2]
    ab = b - a
    seg = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", point - a, ab) / np.where(seg > 0, seg, 1.0)
    s = cum[:-1] + np.clip(t, 0.0, 1.0) * np.sqrt(seg)
    s = np.clip(s, max(lo, 0.0), min(hi, cum[-1]))
    pts = _interp_path(W, cum, s)[:, :2]
    d = np.linalg.norm(pts - point, axis=1)
    return float(s[int(np.argmin(d))])


def _interp_path(W: np.ndarray, cum: np.ndarray, s) -> np.ndarray:
    s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, cum[-1])
    theta = np.unwrap(W[:, 2])
    out = np.column_stack([np.interp(s, cum, W[:, 0]), np.interp(s, cum, W[:, 1]), np.interp(s, cum, theta)])
    out[s >= cum[-1]] = W[-1]
    return out


def path_arclength(path) -> np.ndarray:
    W = _as_state_array(path)
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(W[:, :2], axis=0), axis=1))])


def extract_local_reference(path, current, H: int, lookahead: float, hint: float | None = None,
                            search: tuple[float, float] = (1.0, 3.0)) -> ReferenceWindow:
    """Window of ``H + 1`` poses spaced ``lookahead`` apart along the path.

    The window starts at the path point nearest to ``current``; with ``hint``
    (a previous arc length) the search is limited to ``[hint - search[0],
    hint + search[1]]`` so that self-approaching paths do not jump.  Past the
    end the final waypoint is repeated.
    """
    W = _as_state_array(path)
    if len(W) < 2:
        raise EmptyPath("a path needs at least two waypoints")
    cum = path_arclength(W)
    p = current.position if isinstance(current, Pose) else np.asarray(current, dtype=float)[:2]
    lo, hi = (-math.inf, math.inf) if hint is None else (hint - search[0], hint + search[1])
    s0 = _project_on_path(W, cum, p, lo, hi)
    return reference_at(W, s0, H, lookahead)


def reference_at(path, arc: float, H: int, lookahead: float) -> ReferenceWindow:
    """Window of ``H + 1`` poses starting at arc length ``arc``."""
    W = _as_state_array(path)
    if len(W) < 2:
        raise EmptyPath("a path needs at least two waypoints")
    cum = path_arclength(W)
    arc = float(np.clip(arc, 0.0, cum[-1]))
    return ReferenceWindow(_interp_path(W, cum, arc + lookahead * np.arange(H + 1)), arc)


def _heading_errors(states, ref) -> np.ndarray:
    return wrap_angle(np.asarray(states)[:, 2] - np.asarray(ref)[:, 2])


def tracking_cost(states, ref) -> float:
    s = _as_state_array(states) if not isinstance(states, np.ndarray) else states
    r = ref.states if isinstance(ref, ReferenceWindow) else _as_state_array(ref)
    if len(s) != len(r):
        raise LengthMismatch(f"{len(s)} states vs {len(r)} reference poses")
    w = ref.weights if isinstance(ref, ReferenceWindow) else np.ones(len(r))
    dp = s[:, :2] - r[:, :2]
    return float(w @ (np.sum(dp**2, axis=1) + _heading_errors(s, r) ** 2))


def _utilities(states, sensors: Sequence[Sensor]):
    """Per-step, per-sensor bits ``(H + 1, K)``; states outside all zones give 0."""
    p = np.asarray(states, dtype=float)[:, :2]
    out = np.zeros((len(p), len(sensors)))
    for k, sensor in enumerate(sensors):
        bits, inside = utility_many(p, sensor)
        if not inside.all():
            log.debug("%d states outside the zones of sensor %d", int((~inside).sum()), k)
        out[:, k] = bits
    return out


def comm_regularizer(states, sensors: Sequence[Sensor], rho: float, unit_bits: float = 1.0) -> float:
    """``-rho * sum_h sum_k phi_k(s_h)`` with utilities measured in ``unit_bits``."""
    if rho == 0 or not sensors:
        return 0.0
    s = _as_state_array(states) if not isinstance(states, np.ndarray) else states
    u = _utilities(s, sensors)
    if np.any(u == 0):
        log.warning("some predicted states lie outside every zone; they contribute no utility")
    return -rho * float(u.sum()) / unit_bits


def _objective(states, ref: ReferenceWindow, sensors, config: PlannerConfig):
    track = tracking_cost(states, ref)
    comm = 0.0
    if config.comm_aware and sensors:
        comm = -config.rho * float(_utilities(states, sensors).sum()) / config.utility_unit_bits
    return track + comm, track, comm


# --------------------------------------------------------------------------
# collision convexification


def _placed_vertices(body: ConvexPolytope, states) -> np.ndarray:
    s = np.asarray(states, dtype=float)
    c, sn = np.cos(s[:, 2]), np.sin(s[:, 2])
    R = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)  # (n, 2, 2)
    return np.einsum("nij,kj->nki", R, body.vertices) + s[:, None, :2]


def _obstacle_distances(placed: np.ndarray, obstacles: Sequence[PredictedObstacle], steps: np.ndarray):
    """Footprint-to-obstacle ``(dist, p, q, overlap, obstacle_vertices)`` per obstacle.

    Obstacles of one kind (discs, or polygons with equal vertex count) share a
    single batched kernel call.
    """
    n = len(steps)
    poses = [ob.poses[np.minimum(steps, len(ob.poses) - 1)] for ob in obstacles]
    groups: dict = {}
    for m, ob in enumerate(obstacles):
        key = "disc" if isinstance(ob.shape, Circle) else len(ob.shape.vertices)
        groups.setdefault(key, []).append(m)
    out = [None] * len(obstacles)
    for key, members in groups.items():
        P = np.tile(placed, (len(members), 1, 1))
        if key == "disc":
            centers = np.concatenate([poses[m][:, :2] for m in members])
            radii = np.repeat([obstacles[m].shape.radius for m in members], n)
            res = batch_polygon_circle_distance(P, centers, radii)
            verts = [None] * len(members)
        else:
            V = [_placed_vertices(obstacles[m].shape, poses[m]) for m in members]
            res = batch_polygon_distance(P, np.concatenate(V))
            verts = V
        for j, m in enumerate(members):
            sl = slice(j * n, (j + 1) * n)
            out[m] = tuple(r[sl] for r in res) + (verts[j],)
    return poses, out


def convexify_collision(
    ref_states,
    robot_body: ConvexPolytope,
    obstacles: Sequence[PredictedObstacle],
    d_safe: float,
    collision_mode: str = "polytope",
    steps: Sequence[int] | None = None,
    strict: bool = True,
    keep_anchor_feasible: bool = False,
    heading_margin: float = 0.0,
) -> HalfPlanes:
    """Half-planes on the robot centre that keep each footprint ``d_safe`` clear.

    Polytope mode separates the footprint placed at the reference pose from
    the obstacle and shifts the line by the footprint's support along the
    normal.  Point-mass mode uses circumscribed circles of both bodies.

    With ``strict`` a reference pose that touches an obstacle raises
    :class:`ReferenceInCollision`; otherwise the least-overlap direction is
    used.  ``keep_anchor_feasible`` relaxes each bound to pass through the
    reference centre when the reference itself violates it.
    ``heading_margin`` takes the footprint support over headings within that
    many radians of the reference, covering rotation during the step.
    """
    S = _as_state_array(ref_states) if not isinstance(ref_states, np.ndarray) else np.asarray(ref_states, dtype=float)
    if steps is None:
        steps = range(len(S))
    steps = np.asarray(list(steps), dtype=int)
    if len(obstacles) == 0 or len(steps) == 0:
        return HalfPlanes.empty()
    centres = S[steps, :2]
    r_robot = robot_body.circumradius()
    out_step, out_n, out_b, out_m = [], [], [], []
    placed = _placed_vertices(robot_body, S[steps])
    rel = placed - centres[:, None, :]
    if heading_margin > 0:
        c, sn = math.cos(heading_margin), math.sin(heading_margin)
        turned = [rel @ np.array([[c, sn], [-sn, c]]), rel @ np.array([[c, -sn], [sn, c]])]
        rel = np.concatenate([rel] + turned, axis=1)
    if collision_mode != "point_mass":
        poses, dists = _obstacle_distances(placed, obstacles, steps)
    else:
        poses = [ob.poses[np.minimum(steps, len(ob.poses) - 1)] for ob in obstacles]
    for m, ob in enumerate(obstacles):
        opose = poses[m]
        if collision_mode == "point_mass":
            diff = opose[:, :2] - centres
            dist = np.linalg.norm(diff, axis=1)
            n = np.where(dist[:, None] > 1e-12, diff / np.where(dist > 1e-12, dist, 1.0)[:, None], [1.0, 0.0])
            reach = ob.shape.circumradius() + r_robot + d_safe
            bound = np.einsum("ij,ij->i", n, opose[:, :2]) - reach
            bad = dist <= ob.shape.circumradius() + r_robot
            if strict and bad.any():
                raise ReferenceInCollision(m, int(steps[int(np.argmax(bad))]))
        else:
            dist, p, q, over, obs_v = dists[m]
            if strict and over.any():
                raise ReferenceInCollision(m, int(steps[int(np.argmax(over))]))
            safe = np.where(dist > 0, dist, 1.0)
            n = (q - p) / safe[:, None]
            min_obs = np.einsum("ij,ij->i", n, q)
            for i in np.flatnonzero(over):
                if isinstance(ob.shape, Circle):
                    n[i], _ = penetration_direction(placed[i], center=opose[i, :2], radius=ob.shape.radius)
                    min_obs[i] = n[i] @ opose[i, :2] - ob.shape.radius
                else:
                    n[i], _ = penetration_direction(placed[i], obs_v[i])
                    min_obs[i] = float(np.min(obs_v[i] @ n[i]))
            support = np.max(np.einsum("ikj,ij->ik", rel, n), axis=1)
            bound = min_obs - d_safe - support
        if keep_anchor_feasible:
            bound = np.maximum(bound, np.einsum("ij,ij->i", n, centres))
        out_step.append(steps)
        out_n.append(n)
        out_b.append(bound)
        out_m.append(np.full(len(steps), m))
    return HalfPlanes(np.concatenate(out_step), np.vstack(out_n), np.concatenate(out_b), np.concatenate(out_m))


def footprint_clearance(robot_body: ConvexPolytope, states, obstacles: Sequence[PredictedObstacle]) -> np.ndarray:
    """Exact footprint-to-obstacle distance per state (``inf`` without obstacles)."""
    S = np.asarray(states, dtype=float)
    out = np.full(len(S), np.inf)
    if not obstacles:
        return out
    _, dists = _obstacle_distances(_placed_vertices(robot_body, S), obstacles, np.arange(len(S)))
    for d in dists:
        out = np.minimum(out, d[0])
    return out


def start_clearance_ok(current, robot_body, obstacles, d_safe, collision_mode, tol: float = 1e-9) -> bool:
    s = np.asarray([current.as_array() if isinstance(current, Pose) else current], dtype=float)
    hp = convexify_collision(s, robot_body, obstacles, d_safe, collision_mode, steps=[0], strict=False)
    return bool(np.all(hp.slack(s) >= -tol))


# --------------------------------------------------------------------------
# QP assembly


def _condense(s0, A, B, c):
    """States as affine functions of stacked controls: ``s_h = F[h] + Gam[h] @ u``."""
    H = len(A)
    F = np.zeros((H + 1, 3))
    Gam = np.zeros((H + 1, 3, 2 * H))
    F[0] = s0
    for h in range(H):
        F[h + 1] = A[h] @ F[h] + c[h]
        Gam[h + 1] = A[h] @ Gam[h]
        Gam[h + 1][:, 2 * h : 2 * h + 2] += B[h]
    return F, Gam


def _control_constraints(H: int, limits: Limits, u_prev):
    n = 2 * H
    I = np.eye(n)
    lo = np.tile(limits.u_min, H)
    hi = np.tile(limits.u_max, H)
    rows = [I, -I]
    rhs = [hi, -lo]
    if H > 1:
        D = np.zeros((2 * (H - 1), n))
        for h in range(H - 1):
            D[2 * h : 2 * h + 2, 2 * h : 2 * h + 2] = -np.eye(2)
            D[2 * h : 2 * h + 2, 2 * h + 2 : 2 * h + 4] = np.eye(2)
        rows += [D, -D]
        rhs += [np.tile(limits.a_max, H - 1), -np.tile(limits.a_min, H - 1)]
    if u_prev is not None:
        D0 = np.zeros((2, n))
        D0[:, :2] = np.eye(2)
        up = np.asarray(u_prev, dtype=float)
        lo0 = np.maximum(up + np.asarray(limits.a_min), limits.u_min)
        hi0 = np.minimum(up + np.asarray(limits.a_max), limits.u_max)
        rows += [D0, -D0]
        rhs += [hi0, -lo0]
    return np.vstack(rows), np.concatenate(rhs)


def _position_rows(Gam, steps, normals):
    """Rows ``normal . P Gam[step]`` mapping controls to ``normal . p_step``."""
    return np.einsum("ij,ijk->ik", normals, Gam[steps, :2, :])


def _unwrap_reference(ref_states, anchor_states):
    r = np.array(ref_states, dtype=float)
    r[:, 2] = anchor_states[:, 2] + wrap_angle(r[:, 2] - anchor_states[:, 2])
    return r


@dataclass
class _Problem:
    """Everything frozen at one anchor."""

    s0: np.ndarray
    F: np.ndarray
    Gam: np.ndarray
    ref: np.ndarray
    A_u: np.ndarray
    b_u: np.ndarray
    base_P: np.ndarray
    base_q: np.ndarray
    weights: np.ndarray


def _build_base(s0, lin, ref_states, anchor_states, config: PlannerConfig, u_prev, halfplanes: HalfPlanes,
                weights=None):
    A, B, c = lin
    H = len(A)
    F, Gam = _condense(s0, A, B, c)
    ref = _unwrap_reference(ref_states, anchor_states)
    G1 = Gam[1:].reshape(3 * H, 2 * H)
    r1 = (ref[1:] - F[1:]).reshape(-1)
    w = np.ones(3 * H) if weights is None else np.repeat(np.asarray(weights, dtype=float)[1:], 3)
    WG = w[:, None] * G1
    P = 2.0 * G1.T @ WG + 2.0 * config.control_reg * np.eye(2 * H)
    q = -2.0 * WG.T @ r1
    A_u, b_u = _control_constraints(H, config.limits, u_prev)
    if len(halfplanes):
        rows = _position_rows(Gam, halfplanes.step, halfplanes.normal)
        off = np.einsum("ij,ij->i", halfplanes.normal, F[halfplanes.step, :2])
        A_u = np.vstack([A_u, rows])
        b_u = np.concatenate([b_u, halfplanes.bound - off])
    return _Problem(s0, F, Gam, ref, A_u, b_u, P, q, np.ones(H + 1) if weights is None else np.asarray(weights, float))


def _states_from(prob: _Problem, u) -> np.ndarray:
    return prob.F + prob.Gam @ u


def _zone_table(states, sensors):
    """Frozen ``(beta, alpha, inside)`` arrays of shape ``(H + 1, K)``."""
    p = np.asarray(states)[:, :2]
    K = len(sensors)
    beta = np.zeros((len(p), K))
    alpha = np.zeros((len(p), K))
    inside = np.zeros((len(p), K), dtype=bool)
    for k, s in enumerate(sensors):
        beta[:, k], alpha[:, k], inside[:, k] = s.model.zone_params(p)
    return beta, alpha, inside


def _domain_rows(anchor_pos, sensor: Sensor, alpha: float, trust: float, sides: int = 16):
    """Faces of a polygon inscribed in the disc where the surrogate bracket is >= 0.

    Only faces that can become active inside the trust box are returned, as
    ``(normals, bounds)`` for ``n . p <= b``.
    """
    if alpha <= 0:
        return np.zeros((0, 2)), np.zeros(0)
    d0 = max(float(np.linalg.norm(anchor_pos - sensor.position)), sensor.model.d_min)
    radius = 2.0 ** (1.0 / alpha) * d0
    ang = 2.0 * np.pi * (np.arange(sides) + 0.5) / sides
    n = np.column_stack([np.cos(ang), np.sin(ang)])
    apothem = radius * math.cos(math.pi / sides)
    b = n @ sensor.position + apothem
    reach = n @ anchor_pos + trust * (np.abs(n[:, 0]) + np.abs(n[:, 1]))
    keep = reach > b
    return n[keep], b[keep]


def solve_subproblem(
    anchor: PlanResult,
    ref: ReferenceWindow,
    sensors: Sequence[Sensor],
    config: PlannerConfig,
    constraints: HalfPlanes,
    u_prev=None,
    mu_max_doublings: int = 40,
) -> PlanResult:
    """One MM step: minimise tracking minus the quadratic minorant around ``anchor``.

    Returned states are the linearised-model prediction of the returned
    controls (they satisfy the frozen dynamics exactly).  ``minorant`` and
    ``surrogate`` report both lower bounds at those states.
    """
    S_a = np.asarray(anchor.states, dtype=float)
    U_a = np.asarray(anchor.controls, dtype=float)
    H = len(U_a)
    lin = linearize_along(S_a, U_a, config.tau)
    prob = _build_base(S_a[0], lin, ref.states, S_a, config, u_prev, constraints, ref.weights)
    rows = [prob.A_u]
    rhs = [prob.b_u]
    # trust region on positions
    for j in range(2):
        sel = prob.Gam[1:, j, :]
        rows += [sel, -sel]
        rhs += [S_a[1:, j] + config.trust_radius - prob.F[1:, j], -(S_a[1:, j] - config.trust_radius - prob.F[1:, j])]

    use_comm = config.comm_aware and len(sensors) > 0
    K = len(sensors)
    w = config.rho / config.utility_unit_bits
    if use_comm:
        beta, alpha, inside = _zone_table(S_a, sensors)
        val0 = np.zeros((H + 1, K))
        g0 = np.zeros((H + 1, K, 2))
        mu = np.zeros((H + 1, K))
        for k, sensor in enumerate(sensors):
            v, g, hs, _ = surrogate_terms(S_a[:, :2], S_a[:, :2], sensor, beta[:, k], alpha[:, k])
            val0[:, k] = v
            g0[:, k] = g
            lam_max = np.linalg.eigvalsh(-hs)[:, -1]
            d0 = np.maximum(np.linalg.norm(S_a[:, :2] - sensor.position, axis=1), sensor.model.d_min)
            floor = 1e-3 * sensor.params.bits_per_se / math.log(2.0) / d0**2
            mu[:, k] = np.maximum(1.1 * lam_max, floor)
            for h in range(1, H + 1):
                if not inside[h, k]:
                    continue
                n_d, b_d = _domain_rows(S_a[h, :2], sensor, alpha[h, k], config.trust_radius)
                if len(n_d):
                    rows.append(_position_rows(prob.Gam, np.full(len(n_d), h), n_d))
                    rhs.append(b_d - n_d @ prob.F[h, :2])
        val0[~inside] = 0.0
        g0[~inside] = 0.0
        mu[~inside] = 0.0
    A_in = np.vstack(rows)
    b_in = np.concatenate(rhs)

    for _ in range(mu_max_doublings + 1):
        P = prob.base_P.copy()
        q = prob.base_q.copy()
        if use_comm:
            # -w * [g.(p - p0) - mu/2 |p - p0|^2] summed over (h, k), h >= 1
            Gp = prob.Gam[1:, :2, :]  # (H, 2, n)
            mu_h = mu[1:].sum(axis=1)  # (H,)
            g_h = g0[1:].sum(axis=1)  # (H, 2)
            P += w * np.einsum("h,hin,him->nm", mu_h, Gp, Gp)
            off = prob.F[1:, :2] - S_a[1:, :2]  # p - p0 = off + Gp u
            q += w * (np.einsum("h,hi,hin->n", mu_h, off, Gp) - np.einsum("hi,hin->n", g_h, Gp))
        sol = solve_qp(P, q, A_in, b_in, tol=config.qp_tol)
        u = sol.x
        S = _states_from(prob, u)
        if not use_comm:
            break
        quad, surr = _minorant_values(S, S_a, sensors, beta, alpha, inside, val0, g0, mu)
        bad = quad > surr + 1e-9 * (1.0 + np.abs(surr))
        bad[0] = False
        if not bad.any():
            break
        mu[bad] *= 2.0
    else:
        raise QPNumericalFailure("curvature backtracking did not produce a valid minorant")

    res = PlanResult(states=S, controls=u.reshape(H, 2), constraints=constraints, kkt_residual=sol.kkt_residual)
    res.qp_objective = _qp_model_value(S, prob.ref, u, config, sensors, S_a, val0 if use_comm else None,
                                       g0 if use_comm else None, mu if use_comm else None, prob.weights)
    if use_comm:
        res.minorant, res.surrogate = _minorant_values(S, S_a, sensors, beta, alpha, inside, val0, g0, mu)
        res._mm_state = (beta, alpha, inside, val0, g0, mu)  # reused by mm_solve
        res._anchor_states = S_a
    return res


def _minorant_values(S, S_a, sensors, beta, alpha, inside, val0, g0, mu):
    dp = S[:, None, :2] - S_a[:, None, :2]  # (H+1, 1, 2)
    quad = val0 + np.einsum("hkj,hkj->hk", g0, np.broadcast_to(dp, g0.shape)) - 0.5 * mu * np.sum(dp**2, axis=2)
    surr = np.zeros_like(quad)
    for k, sensor in enumerate(sensors):
        v, *_ = surrogate_terms(S[:, :2], S_a[:, :2], sensor, beta[:, k], alpha[:, k])
        surr[:, k] = v
    quad = np.where(inside, quad, 0.0)
    surr = np.where(inside, surr, 0.0)
    return quad, surr


def _qp_model_value(S, ref, u, config, sensors, S_a, val0, g0, mu, weights=None):
    w = np.ones(len(S)) if weights is None else weights
    track = float(w @ (np.sum((S[:, :2] - ref[:, :2]) ** 2, axis=1) + (S[:, 2] - ref[:, 2]) ** 2))
    track += config.control_reg * float(u @ u)
    if val0 is None:
        return track
    dp = S[:, None, :2] - S_a[:, None, :2]
    quad = val0 + np.einsum("hkj,hkj->hk", g0, np.broadcast_to(dp, g0.shape)) - 0.5 * mu * np.sum(dp**2, axis=2)
    return track - config.rho / config.utility_unit_bits * float(quad.sum())


# --------------------------------------------------------------------------
# initialization and the MM loop


def _seed_controls(current: np.ndarray, ref: np.ndarray, config: PlannerConfig) -> np.ndarray:
    """Feasible heuristic controls that head along the reference."""
    H = len(ref) - 1
    lim = config.limits
    u = np.zeros((H, 2))
    prev = np.zeros(2)
    s = current.copy()
    for h in range(H):
        tgt = ref[h + 1]
        dx, dy = tgt[0] - s[0], tgt[1] - s[1]
        dist = math.hypot(dx, dy)
        head = math.atan2(dy, dx) if dist > 1e-9 else tgt[2]
        err = float(wrap_angle(head - s[2]))
        v = dist / config.tau * max(math.cos(err), 0.0)
        wv = err / config.tau
        cand = np.array([v, wv])
        cand = np.clip(cand, prev + np.asarray(lim.a_min), prev + np.asarray(lim.a_max))
        cand = np.clip(cand, lim.u_min, lim.u_max)
        u[h] = cand
        prev = cand
        s = rollout(s, cand[None, :], config.tau)[-1]
    return u


def _clip_controls(u, config: PlannerConfig, u_prev):
    """Project onto the control boxes, keeping increments inside their bounds."""
    lim = config.limits
    out = np.array(u, dtype=float)
    prev = None if u_prev is None else np.asarray(u_prev, dtype=float)
    for h in range(len(out)):
        lo, hi = np.asarray(lim.u_min), np.asarray(lim.u_max)
        if prev is not None:
            lo = np.maximum(lo, prev + np.asarray(lim.a_min))
            hi = np.minimum(hi, prev + np.asarray(lim.a_max))
        out[h] = np.clip(out[h], lo, hi)
        prev = out[h]
    return out


def initialize(
    current: Pose,
    ref: ReferenceWindow,
    sensors: Sequence[Sensor],
    config: PlannerConfig,
    obstacles: Sequence[PredictedObstacle] = (),
    robot_body: ConvexPolytope = DEFAULT_BODY,
    u_prev=None,
    seed_controls=None,
    passes: int | None = None,
) -> PlanResult:
    """Distance-based initial guess: tracking plus ``eta * sum |p_h - z_k|^2``.

    The sensor term is dropped when the planner is communication-unaware.
    Raises :class:`Infeasible` if the start already violates the safety
    distance or the convexified constraint set is empty.
    """
    s0 = current.as_array() if isinstance(current, Pose) else np.asarray(current, dtype=float)
    H = ref.horizon
    if not start_clearance_ok(s0, robot_body, obstacles, config.d_safe, config.collision_mode):
        raise Infeasible("start pose violates the safety distance")
    if seed_controls is None:
        U = _seed_controls(s0, ref.states, config)
        passes = 2 if passes is None else passes
    else:
        U = _clip_controls(np.asarray(seed_controls, dtype=float).reshape(H, 2), config, u_prev)
        passes = 1 if passes is None else passes
    S = rollout(s0, U, config.tau)
    eta = config.eta if config.comm_aware else 0.0
    steps = range(1, H + 1)
    for _ in range(passes):
        lin = linearize_along(S, U, config.tau)
        hp = convexify_collision(S, robot_body, obstacles, config.d_safe, config.collision_mode, steps=steps,
                                 strict=False, heading_margin=config.heading_margin)
        prob = _build_base(s0, lin, ref.states, S, config, u_prev, hp, ref.weights)
        P, q = prob.base_P.copy(), prob.base_q.copy()
        if eta > 0 and sensors:
            Gp = prob.Gam[1:, :2, :]
            for sensor in sensors:
                off = prob.F[1:, :2] - sensor.position
                P += 2.0 * eta * np.einsum("hin,him->nm", Gp, Gp)
                q += 2.0 * eta * np.einsum("hi,hin->n", off, Gp)
        try:
            sol = solve_qp(P, q, prob.A_u, prob.b_u, tol=config.qp_tol)
        except Infeasible:
            hp = convexify_collision(S, robot_body, obstacles, config.d_safe, config.collision_mode, steps=steps,
                                     strict=False, keep_anchor_feasible=True, heading_margin=config.heading_margin)
            prob = _build_base(s0, lin, ref.states, S, config, u_prev, hp, ref.weights)
            sol = solve_qp(P, q, prob.A_u, prob.b_u, tol=config.qp_tol)
        U = _clip_controls(sol.x.reshape(H, 2), config, u_prev)
        S = rollout(s0, U, config.tau)
    J, track, comm = _objective(S, ref, sensors, config)
    return PlanResult(states=S, controls=U, objective_trace=[J], cost_breakdown=(track, comm), status="Converged",
                      kkt_residual=sol.kkt_residual)


def mm_solve(
    current: Pose,
    ref: ReferenceWindow,
    sensors: Sequence[Sensor],
    obstacles: Sequence[PredictedObstacle],
    config: PlannerConfig,
    robot_body: ConvexPolytope = DEFAULT_BODY,
    u_prev=None,
    warm_controls=None,
) -> PlanResult:
    """Initialise, then iterate convex subproblems until the objective settles.

    Every accepted iterate is a nonlinear rollout of box-feasible controls,
    satisfies the separating lines built at its predecessor, and has a true
    objective no larger than its predecessor's.
    """
    init = initialize(current, ref, sensors, config, obstacles, robot_body, u_prev, warm_controls)
    s0 = init.states[0]
    H = ref.horizon
    steps = range(1, H + 1)
    anchor = init
    J_prev = init.objective_trace[0]
    trace = [J_prev]
    status = "MaxIters"
    it = 0
    last = None
    for it in range(1, config.mm_max_iters + 1):
        hp = convexify_collision(anchor.states, robot_body, obstacles, config.d_safe, config.collision_mode,
                                 steps=steps, strict=False, keep_anchor_feasible=True,
                                 heading_margin=config.heading_margin)
        need = np.minimum(footprint_clearance(robot_body, anchor.states, obstacles), config.d_safe) - 1e-9
        try:
            sub = solve_subproblem(anchor, ref, sensors, config, hp, u_prev)
        except (Infeasible, QPNumericalFailure) as exc:
            log.debug("MM iteration %d failed: %s", it, exc)
            status = "Converged"
            it -= 1
            break
        accepted = None
        t = 1.0
        U_a = anchor.controls
        for _ in range(8):
            U = _clip_controls(U_a + t * (sub.controls - U_a), config, u_prev)
            S = rollout(s0, U, config.tau)
            J, track, comm = _objective(S, ref, sensors, config)
            feasible = len(hp) == 0 or (bool(np.all(hp.slack(S) >= -config.qp_tol))
                                        and bool(np.all(footprint_clearance(robot_body, S, obstacles) >= need)))
            if feasible and J <= J_prev and _sandwich_ok(S, anchor.states, sensors, config, sub):
                accepted = (S, U, J, track, comm)
                break
            t *= 0.5
        if accepted is None:
            status = "Converged"
            it -= 1
            break
        S, U, J, track, comm = accepted
        anchor = PlanResult(states=S, controls=U, objective_trace=list(trace), cost_breakdown=(track, comm),
                            kkt_residual=sub.kkt_residual, constraints=hp)
        last = sub
        trace.append(J)
        change = J_prev - J
        J_prev = J
        if change <= config.mm_tol:
            status = "Converged"
            break
    anchor.objective_trace = trace
    anchor.mm_iterations = it
    anchor.status = status
    if last is not None and getattr(last, "_mm_state", None) is not None:
        anchor.minorant, anchor.surrogate = _minorant_values(anchor.states, last._anchor_states, sensors,
                                                             *last._mm_state)
    return anchor


def _sandwich_ok(S, S_a, sensors, config, sub: PlanResult) -> bool:
    """Quadratic minorant <= log surrogate at the candidate (frozen zones)."""
    st = getattr(sub, "_mm_state", None)
    if st is None:
        return True
    quad, surr = _minorant_values(S, S_a, sensors, *st)
    return bool(np.all(quad[1:] <= surr[1:] + 1e-9 * (1.0 + np.abs(surr[1:]))))


class Planner:
    """Receding-horizon wrapper that carries the warm start between calls.

    The window start advances by ``ref_speed * tau`` per call and is kept
    within ``max_lead`` of the nearest path point, so the robot is pulled
    towards a fixed schedule: lingering builds a forward pull and running
    ahead builds a backward one.
    """

    def __init__(self, path, config: PlannerConfig, robot_body: ConvexPolytope = DEFAULT_BODY):
        self.path = _as_state_array(path)
        self._length = float(path_arclength(self.path)[-1])
        self.config = config
        self.robot_body = robot_body
        self._prev: PlanResult | None = None
        self._arc: float | None = None
        self._progress: float | None = None

    def reference(self, current: Pose) -> ReferenceWindow:
        lookahead = self.config.ref_speed * self.config.tau
        ref = extract_local_reference(self.path, current, self.config.horizon, lookahead, hint=self._arc)
        self._arc = ref.arc_start
        if self._progress is not None:
            lead = self.config.max_lead
            start = min(max(self._progress + lookahead, ref.arc_start - lead), ref.arc_start + lead)
            if start != ref.arc_start:
                ref = reference_at(self.path, start, self.config.horizon, lookahead)
        self._progress = ref.arc_start
        # entries clamped at the final waypoint pull harder so the goal is actually reached
        arcs = ref.arc_start + lookahead * np.arange(len(ref.states))
        w = np.where(arcs >= self._length - 1e-9, self.config.goal_weight, 1.0)
        return ReferenceWindow(ref.states, ref.arc_start, w)

    def plan(self, current: Pose, sensors, obstacles, u_prev=None, d_safe: float | None = None) -> PlanResult:
        ref = self.reference(current)
        cfg = self.config if d_safe is None else replace(self.config, d_safe=d_safe)
        warm = None
        if self._prev is not None:
            warm = np.vstack([self._prev.controls[1:], self._prev.controls[-1:]])
        res = mm_solve(current, ref, sensors, obstacles, cfg, self.robot_body, u_prev=u_prev, warm_controls=warm)
        self._prev = res
        return res

    def reset(self):
        self._prev = None
        self._arc = None
        self._progress = None
