"""Unicycle kinematics, its first-order expansion and actuation limits.

State ``s = (x, y, theta)``, control ``u = (v, w)`` (linear and angular
velocity), forward-Euler step of length ``tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Pose, wrap_angle


class Control(NamedTuple):
    v: float
    w: float


@dataclass(frozen=True)
class Limits:
    u_min: Control = Control(-0.2, -1.0)
    u_max: Control = Control(1.0, 1.0)
    a_min: Control = Control(-0.5, -0.5)
    a_max: Control = Control(0.5, 0.5)

    def __post_init__(self):
        for name in ("u_min", "u_max", "a_min", "a_max"):
            object.__setattr__(self, name, Control(*map(float, getattr(self, name))))
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        if any(lo > hi for lo, hi in zip(self.a_min, self.a_max)):
            raise ValueError("a_min must not exceed a_max")

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("u_min", "u_max", "a_min", "a_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "Limits":
        return cls(**{k: Control(*d[k]) for k in ("u_min", "u_max", "a_min", "a_max") if k in d})


@dataclass(frozen=True)
class LinearizedDynamics:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def predict(self, s, u) -> np.ndarray:
        return self.A @ np.asarray(s, dtype=float) + self.B @ np.asarray(u, dtype=float) + self.c


def step_nonlinear(s: Pose, u, tau: float) -> Pose:
    if not tau > 0:
        raise ValueError("tau must be positive")
    v, w = float(u[0]), float(u[1])
    return Pose(
        s.x + tau * v * math.cos(s.theta),
        s.y + tau * v * math.sin(s.theta),
        s.theta + tau * w,
    )


def rollout(s0, controls, tau: float) -> np.ndarray:
    """Unwrapped state trajectory of shape ``(H + 1, 3)`` under ``controls``.

    Headings are left continuous (not wrapped) so that consecutive states can
    be differenced; wrap with :func:`wrap_angle` when a normalised pose is
    needed.
    """
    u = np.asarray(controls, dtype=float).reshape(-1, 2)
    s = np.empty((len(u) + 1, 3))
    s[0] = s0.as_array() if isinstance(s0, Pose) else np.asarray(s0, dtype=float)
    for h in range(len(u)):
        x, y, th = s[h]
        s[h + 1] = (x + tau * u[h, 0] * math.cos(th), y + tau * u[h, 0] * math.sin(th), th + tau * u[h, 1])
    return s


def linearize(s_ref, u_ref, tau: float) -> LinearizedDynamics:
    """Jacobians of :func:`step_nonlinear` at ``(s_ref, u_ref)``.

    ``c`` makes the affine model exact at the expansion point.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = s_ref.as_array() if isinstance(s_ref, Pose) else np.asarray(s_ref, dtype=float)
    v, w = float(u_ref[0]), float(u_ref[1])
    c_, s_ = math.cos(s[2]), math.sin(s[2])
    A = np.array([[1.0, 0.0, -tau * v * s_], [0.0, 1.0, tau * v * c_], [0.0, 0.0, 1.0]])
    B = np.array([[tau * c_, 0.0], [tau * s_, 0.0], [0.0, tau]])
    nxt = np.array([s[0] + tau * v * c_, s[1] + tau * v * s_, s[2] + tau * w])
    c = nxt - A @ s - B @ np.array([v, w])
    return LinearizedDynamics(A, B, c)


def linearize_along(states, controls, tau: float):
    """Stacked ``(A, B, c)`` for every step of a trajectory (vectorised)."""
    s = np.asarray(states, dtype=float)[:-1]
    u = np.asarray(controls, dtype=float)
    H = len(u)
    cos, sin = np.cos(s[:, 2]), np.sin(s[:, 2])
    A = np.tile(np.eye(3), (H, 1, 1))
    A[:, 0, 2] = -tau * u[:, 0] * sin
    A[:, 1, 2] = tau * u[:, 0] * cos
    B = np.zeros((H, 3, 2))
    B[:, 0, 0] = tau * cos
    B[:, 1, 0] = tau * sin
    B[:, 2, 1] = tau
    nxt = np.column_stack([s[:, 0] + tau * u[:, 0] * cos, s[:, 1] + tau * u[:, 0] * sin, s[:, 2] + tau * u[:, 1]])
    c = nxt - np.einsum("hij,hj->hi", A, s) - np.einsum("hij,hj->hi", B, u)
    return A, B, c


@dataclass(frozen=True)
class LimitViolation:
    step: int
    kind: str  # "velocity" or "acceleration"
    component: str  # "v" or "w"
    value: float
    bound: float


def check_limits(
    controls: Sequence, limits: Limits, previous=None, tol: float = 1e-9
) -> list[LimitViolation]:
    """Box and increment violations of a control sequence.

    ``previous`` optionally prepends the control applied before the sequence;
    increment violations are then reported for step 0 as well.
    """
    u = np.asarray(controls, dtype=float).reshape(-1, 2)
    if len(u) == 0:
        raise ValueError("need at least one control")
    out = []
    names = ("v", "w")
    for h, row in enumerate(u):
        for j in range(2):
            if row[j] < limits.u_min[j] - tol:
                out.append(LimitViolation(h, "velocity", names[j], row[j], limits.u_min[j]))
            elif row[j] > limits.u_max[j] + tol:
                out.append(LimitViolation(h, "velocity", names[j], row[j], limits.u_max[j]))
    seq = u if previous is None else np.vstack([np.asarray(previous, dtype=float), u])
    first = 1 if previous is None else 0
    for k in range(1, len(seq)):
        du = seq[k] - seq[k - 1]
        h = k - 1 + first if previous is None else k - 1
        for j in range(2):
            if du[j] < limits.a_min[j] - tol:
                out.append(LimitViolation(h, "acceleration", names[j], du[j], limits.a_min[j]))
            elif du[j] > limits.a_max[j] + tol:
                out.append(LimitViolation(h, "acceleration", names[j], du[j], limits.a_max[j]))
    return out


def poses_from_states(states) -> list[Pose]:
    return [Pose(float(x), float(y), float(wrap_angle(t))) for x, y, t in np.asarray(states)]
