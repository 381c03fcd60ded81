"""Independent reference computations used to cross-check the library.

Nothing here imports the code under test beyond plain data containers.
"""
from __future__ import annotations

import math

import numpy as np


def sample_boundary(vertices, per_edge: int = 2000) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    t = np.linspace(0.0, 1.0, per_edge, endpoint=False)[:, None]
    pts = [a + t * (b - a) for a, b in zip(v, np.roll(v, -1, axis=0))]
    return np.vstack(pts)


def inside_convex(vertices, point) -> bool:
    """Point-in-convex-polygon by edge cross products (either orientation)."""
    v = np.asarray(vertices, dtype=float)
    e = np.roll(v, -1, axis=0) - v
    r = np.asarray(point, dtype=float) - v
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    return bool(np.all(cross >= -1e-12) or np.all(cross <= 1e-12))


def _point_segment_distances(points, a, b) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / max(float(ab @ ab), 1e-300), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def sampled_set_distance(P_vertices, Q_vertices, per_edge: int = 200) -> float:
    """Distance between two convex polygons from boundary samples.

    Samples of each boundary (vertices included) are measured exactly
    against the other polygon's edges; the closest pair always involves a
    vertex, so the minimum over both directions is the set distance.
    """
    P = np.asarray(P_vertices, dtype=float)
    Q = np.asarray(Q_vertices, dtype=float)
    if any(inside_convex(Q, p) for p in P) or any(inside_convex(P, q) for q in Q):
        return 0.0
    # boundaries may cross without either containing a vertex of the other
    for p0, p1 in zip(P, np.roll(P, -1, axis=0)):
        for q0, q1 in zip(Q, np.roll(Q, -1, axis=0)):
            if _segments_cross(p0, p1, q0, q1):
                return 0.0
    best = math.inf
    for A, B in ((P, Q), (Q, P)):
        pts = sample_boundary(A, per_edge)
        for b0, b1 in zip(B, np.roll(B, -1, axis=0)):
            best = min(best, float(_point_segment_distances(pts, b0, b1).min()))
    return best


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return o1 * o2 < 0 and o3 * o4 < 0


def random_convex_polygon(rng, center, radius_range=(0.3, 1.5), n_range=(3, 8)) -> np.ndarray:
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    while np.max(np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))) > np.pi * 0.95 or len(np.unique(ang)) < n:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = rng.uniform(*radius_range)
    return np.column_stack([np.cos(ang), np.sin(ang)]) * r + np.asarray(center, dtype=float)


def brute_force_fit(y_db, dist, alpha_grid, beta_db_grid):
    """Exhaustive least squares over an (alpha, 10 log10 beta) grid."""
    L = 10.0 * np.log10(np.asarray(dist, dtype=float))
    y = np.asarray(y_db, dtype=float)
    best = (math.inf, None, None)
    for a in alpha_grid:
        resid = y[None, :] - (np.asarray(beta_db_grid)[:, None] - a * L[None, :])
        mse = np.mean(resid**2, axis=1)
        k = int(np.argmin(mse))
        if mse[k] < best[0]:
            best = (float(mse[k]), float(a), float(beta_db_grid[k]))
    return best[1], best[2], math.sqrt(best[0])


def shannon_bits(gain, p=2e-3, noise=1e-8, bandwidth=1e5, slot=0.1) -> float:
    return slot * bandwidth * math.log2(1.0 + gain * p / noise)


def unicycle(s, u, tau):
    x, y, th = s
    return np.array([x + tau * u[0] * math.cos(th), y + tau * u[0] * math.sin(th), th + tau * u[1]])


def numeric_jacobian(f, x, h=1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def central_difference(f, x, h=1e-6) -> np.ndarray:
    return numeric_jacobian(lambda z: np.atleast_1d(f(z)), x, h)[0]


def multizone_gain(zones_vertices, betas, alphas, sensor, point, d_min=0.5):
    """Lowest-index zone containing ``point`` decides the parameters."""
    for verts, b, a in zip(zones_vertices, betas, alphas):
        if inside_convex(verts, point):
            d = max(float(np.linalg.norm(np.asarray(point) - np.asarray(sensor))), d_min)
            return b * d ** (-a)
    return None
