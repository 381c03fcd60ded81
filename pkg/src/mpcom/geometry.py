"""Planar geometry: poses, convex polytopes, set distances and separating lines.

Points are plain ``numpy`` arrays of shape ``(2,)``.  Polytopes are stored in
half-space form ``G z <= g`` with unit-norm rows, together with their vertices
in counter-clockwise order (both representations are needed: the half-spaces
for membership tests and the vertices for support functions and distances).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

__all__ = [
    "DegenerateInput",
    "NotSeparable",
    "Pose",
    "ConvexPolytope",
    "Circle",
    "wrap_angle",
    "polytope_from_vertices",
    "rectangle",
    "regular_polygon",
    "transform_polytope",
    "polytope_distance",
    "separating_hyperplane",
    "contains",
    "support",
    "shape_distance",
    "point_polygon_distance",
]


class DegenerateInput(ValueError):
    """Raised when a vertex set spans zero area."""


class NotSeparable(ValueError):
    """Raised when a separating line is requested for intersecting sets."""


def wrap_angle(theta):
    """Map angles to the half-open interval (-pi, pi]."""
    return math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), 2.0 * math.pi)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading(self) -> float:
        return self.theta

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Bounded convex polygon ``{z : G z <= g}``.

    Use :func:`polytope_from_vertices` to build one; the constructor trusts its
    arguments.  ``vertices`` are counter-clockwise and edge ``i`` runs from
    vertex ``i`` to vertex ``i + 1``, with outward normal ``G[i]``.
    """

    G: np.ndarray
    g: np.ndarray
    vertices: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return len(self.g)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        area = 0.5 * cross.sum()
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / (6.0 * area)
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / (6.0 * area)
        return np.array([cx, cy])

    @property
    def area(self) -> float:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return float(0.5 * (v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]).sum())

    def circumradius(self, center=None) -> float:
        c = np.zeros(2) if center is None else np.asarray(center, dtype=float)
        return float(np.max(np.linalg.norm(self.vertices - c, axis=1)))

    def translated(self, offset) -> "ConvexPolytope":
        offset = np.asarray(offset, dtype=float)
        return ConvexPolytope(self.G.copy(), self.g + self.G @ offset, self.vertices + offset)

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvexPolytope":
        return polytope_from_vertices(d["vertices"])


@dataclass(frozen=True)
class Circle:
    """Disc of the given radius centred on the body-frame origin."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("circle radius must be positive")

    def circumradius(self, center=None) -> float:
        return self.radius


def polytope_from_vertices(vertices) -> ConvexPolytope:
    """Minimal half-space description of the convex hull of ``vertices``."""
    pts = np.asarray(vertices, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateInput("need at least three planar points")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateInput("convex hull has zero area") from exc
    if hull.volume <= 1e-12:
        raise DegenerateInput("convex hull has zero area")
    # qhull returns 2-D hull vertices in counter-clockwise order
    v = pts[hull.vertices]
    return _from_ccw(v)


def _from_ccw(v: np.ndarray) -> ConvexPolytope:
    edges = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    g = np.einsum("ij,ij->i", normals, v)
    return ConvexPolytope(normals, g, v.copy())


def rectangle(length: float, width: float, center=(0.0, 0.0)) -> ConvexPolytope:
    cx, cy = center
    hl, hw = 0.5 * length, 0.5 * width
    return polytope_from_vertices(
        [(cx - hl, cy - hw), (cx + hl, cy - hw), (cx + hl, cy + hw), (cx - hl, cy + hw)]
    )


def regular_polygon(radius: float, sides: int, center=(0.0, 0.0)) -> ConvexPolytope:
    ang = 2.0 * np.pi * np.arange(sides) / sides
    pts = np.column_stack([np.cos(ang), np.sin(ang)]) * radius + np.asarray(center, dtype=float)
    return polytope_from_vertices(pts)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def transform_polytope(body: ConvexPolytope, pose: Pose) -> ConvexPolytope:
    """Place a body-frame polytope at ``pose`` (rotate, then translate)."""
    R = _rotation(pose.theta)
    t = np.array([pose.x, pose.y])
    G = body.G @ R.T
    return ConvexPolytope(G, body.g + G @ t, body.vertices @ R.T + t)


def contains(zone: ConvexPolytope, point, tol: float = 1e-12) -> bool:
    """Closed-set membership; points on the boundary count as inside."""
    p = np.asarray(point, dtype=float)
    return bool(np.all(zone.G @ p <= zone.g + tol * (1.0 + np.abs(zone.g))))


def contains_many(zone: ConvexPolytope, points, tol: float = 1e-12) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.all(p @ zone.G.T <= zone.g + tol * (1.0 + np.abs(zone.g)), axis=1)


def support(shape, direction, pose: Pose | None = None) -> float:
    """Support function ``max_{z in shape} direction . z`` (body frame unless posed)."""
    d = np.asarray(direction, dtype=float)
    if pose is not None:
        d = _rotation(pose.theta).T @ d
        offset = float(np.dot(direction, [pose.x, pose.y]))
    else:
        offset = 0.0
    if isinstance(shape, Circle):
        return offset + shape.radius * float(np.linalg.norm(d))
    return offset + float(np.max(shape.vertices @ d))


def _segment_closest(p, a, b):
    """Closest points on segments ``a_i b_i`` to points ``p_i`` (broadcasting)."""
    ab = b - a
    denom = np.einsum("...i,...i->...", ab, ab)
    t = np.einsum("...i,...i->...", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab


def point_polygon_distance(poly: ConvexPolytope, point) -> tuple[float, np.ndarray]:
    """Distance from a point to a polygon and the closest polygon point."""
    p = np.asarray(point, dtype=float)
    if contains(poly, p):
        return 0.0, p.copy()
    a = poly.vertices
    b = np.roll(a, -1, axis=0)
    c = _segment_closest(p[None, :], a, b)
    d = np.linalg.norm(c - p, axis=1)
    i = int(np.argmin(d))
    return float(d[i]), c[i]


def _intersection_witness(P: ConvexPolytope, Q: ConvexPolytope):
    """A common point of two polygons, or ``None`` if they are disjoint."""
    # separating-axis test over both edge-normal sets
    for A, B in ((P, Q), (Q, P)):
        proj = B.vertices @ A.G.T
        if np.any(proj.min(axis=0) > A.g + 1e-12):
            return None
    for A, B in ((P, Q), (Q, P)):
        inside = np.all(A.vertices @ B.G.T <= B.g + 1e-12, axis=1)
        if inside.any():
            return A.vertices[int(np.argmax(inside))].copy()
    # no vertex containment: two edges must cross
    a0, a1 = P.vertices, np.roll(P.vertices, -1, axis=0)
    b0, b1 = Q.vertices, np.roll(Q.vertices, -1, axis=0)
    for i in range(len(a0)):
        r = a1[i] - a0[i]
        s = b1 - b0
        den = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = b0 - a0[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
            u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / den
        ok = (np.abs(den) > 1e-15) & (t >= -1e-12) & (t <= 1 + 1e-12) & (u >= -1e-12) & (u <= 1 + 1e-12)
        if ok.any():
            j = int(np.argmax(ok))
            return a0[i] + t[j] * r
    # numerically touching sets; fall back to the nearest vertex pair
    return P.vertices[0].copy()


def polytope_distance(P: ConvexPolytope, Q: ConvexPolytope):
    """Euclidean distance between two convex polygons with witness points.

    Returns ``(distance, p, q)`` with ``p`` in ``P`` and ``q`` in ``Q``.  For
    disjoint polygons the minimum is attained between a vertex of one and an
    edge of the other, so checking all vertex-edge pairs is exact.
    """
    w = _intersection_witness(P, Q)
    if w is not None:
        return 0.0, w, w.copy()
    best = (math.inf, None, None)
    for A, B, swap in ((P, Q, False), (Q, P, True)):
        a = B.vertices
        b = np.roll(a, -1, axis=0)
        v = A.vertices
        c = _segment_closest(v[:, None, :], a[None, :, :], b[None, :, :])
        d = np.linalg.norm(c - v[:, None, :], axis=2)
        i, j = np.unravel_index(int(np.argmin(d)), d.shape)
        if d[i, j] < best[0]:
            pa, pb = v[i], c[i, j]
            best = (float(d[i, j]), pb, pa) if swap else (float(d[i, j]), pa, pb)
    return best[0], best[1].copy(), best[2].copy()


def shape_distance(robot: ConvexPolytope, shape, pose: Pose):
    """Distance from a placed robot polygon to an obstacle shape at ``pose``.

    Returns ``(distance, p_robot, q_obstacle)``.
    """
    if isinstance(shape, Circle):
        c = np.array([pose.x, pose.y])
        d, p = point_polygon_distance(robot, c)
        if d <= shape.radius:
            return 0.0, p, p.copy()
        q = c + (p - c) * (shape.radius / d)
        return d - shape.radius, p, q
    return polytope_distance(robot, transform_polytope(shape, pose))


def separating_hyperplane(P: ConvexPolytope, Q: ConvexPolytope):
    """Unit normal ``n`` and offset ``b`` with ``n.z <= b`` on P and ``n.z >= b + dist`` on Q.

    The offset is P's supporting value in direction ``n``; ``n`` points from
    P's witness point to Q's.
    """
    dist, p, q = polytope_distance(P, Q)
    if dist <= 0.0:
        raise NotSeparable("polytopes intersect")
    n = (q - p) / dist
    return n, float(n @ p)


# --------------------------------------------------------------------------
# batched kernels used by the planner; polygons are ``(N, k, 2)`` CCW arrays


def _edge_normals(V: np.ndarray):
    E = np.roll(V, -1, axis=-2) - V
    n = np.stack([E[..., 1], -E[..., 0]], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    g = np.einsum("...ij,...ij->...i", n, V)
    return n, g


def batch_polygon_distance(P: np.ndarray, Q: np.ndarray):
    """Pairwise distances between polygons ``P[i]`` and ``Q[i]``.

    Returns ``(dist, p, q, overlap)``; for overlapping pairs ``dist`` is 0 and
    the witness points are meaningless.
    """
    nP, gP = _edge_normals(P)
    nQ, gQ = _edge_normals(Q)
    minQ_on_P = np.einsum("nij,nkj->nik", nP, Q).min(axis=2)  # (N, a)
    minP_on_Q = np.einsum("nij,nkj->nik", nQ, P).min(axis=2)
    separated = np.any(minQ_on_P > gP + 1e-12, axis=1) | np.any(minP_on_Q > gQ + 1e-12, axis=1)
    best_d = np.full(len(P), np.inf)
    best_p = np.zeros((len(P), 2))
    best_q = np.zeros((len(P), 2))
    for A, B, swap in ((P, Q, False), (Q, P, True)):
        a = B
        b = np.roll(B, -1, axis=1)
        c = _segment_closest(A[:, :, None, :], a[:, None, :, :], b[:, None, :, :])  # (N, ka, kb, 2)
        d = np.linalg.norm(c - A[:, :, None, :], axis=3)
        flat = d.reshape(len(P), -1)
        k = np.argmin(flat, axis=1)
        i, j = np.unravel_index(k, d.shape[1:])
        dk = flat[np.arange(len(P)), k]
        va = A[np.arange(len(P)), i]
        cb = c[np.arange(len(P)), i, j]
        better = dk < best_d
        best_d = np.where(better, dk, best_d)
        pa, qb = (cb, va) if swap else (va, cb)
        best_p[better] = pa[better]
        best_q[better] = qb[better]
    overlap = ~separated
    best_d[overlap] = 0.0
    return best_d, best_p, best_q, overlap


def batch_polygon_circle_distance(P: np.ndarray, centers: np.ndarray, radii: np.ndarray):
    """Distances from polygons ``P[i]`` to discs ``(centers[i], radii[i])``.

    Returns ``(dist, p, q, overlap)`` with ``p`` on the polygon, ``q`` on the disc.
    """
    nP, gP = _edge_normals(P)
    inside = np.all(np.einsum("nij,nj->ni", nP, centers) <= gP, axis=1)
    a = P
    b = np.roll(P, -1, axis=1)
    c = _segment_closest(centers[:, None, :], a, b)
    d = np.linalg.norm(c - centers[:, None, :], axis=2)
    k = np.argmin(d, axis=1)
    idx = np.arange(len(P))
    dc = d[idx, k]
    p = c[idx, k]
    overlap = inside | (dc <= radii)
    safe = np.where(dc > 0, dc, 1.0)
    q = centers + (p - centers) * (radii / safe)[:, None]
    dist = np.where(overlap, 0.0, dc - radii)
    return dist, p, q, overlap


def penetration_direction(P_vertices: np.ndarray, Q_vertices: np.ndarray | None = None,
                          center=None, radius: float = 0.0):
    """Unit direction from P towards Q of least overlap (separating-axis test).

    For a disc pass ``center`` and ``radius`` instead of ``Q_vertices``.
    Returns ``(n, overlap)`` with ``overlap = max_P n.z - min_Q n.z``.
    """
    nP, gP = _edge_normals(P_vertices)
    if Q_vertices is None:
        c = np.asarray(center, dtype=float)
        cand = [nP]
        minQ = nP @ c - radius
        over = gP - minQ
        d = c - P_vertices.mean(axis=0)
        if np.linalg.norm(d) > 1e-12:
            u = d / np.linalg.norm(d)
            cand.append(u[None, :])
            over = np.append(over, np.max(P_vertices @ u) - (u @ c - radius))
        dirs = np.vstack(cand)
    else:
        nQ, _ = _edge_normals(Q_vertices)
        dirs = np.vstack([nP, -nQ])
        over = np.max(P_vertices @ dirs.T, axis=0) - np.min(Q_vertices @ dirs.T, axis=0)
    k = int(np.argmin(over))
    return dirs[k], float(over[k])
