"""Link budget, per-slot harvested bits and their concave minorant.

For a zone with gain ``beta`` and exponent ``alpha`` the per-slot utility is

    phi(d) = tau * B * log2(1 + c * d**-alpha),    c = beta * p / sigma^2.

Around an anchor distance ``d0`` the surrogate replaces ``d**-alpha`` by its
tangent in the variable ``x = d**alpha`` (``1/x`` is convex, so the tangent is
a global under-estimator):

    d**-alpha >= 2 d0**-alpha - d0**(-2 alpha) * d**alpha.

Distances are clamped below at the model's ``d_min`` on both sides so that the
bound holds for the clamped gain used everywhere else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose
from .radio import DistanceModel, MultiZoneModel, OutsideAllZones, model_gain_many

LN2 = math.log(2.0)
EPS_DOM = 1e-6


class DomainViolation(ValueError):
    """The surrogate's log argument fell to ``EPS_DOM`` or below."""


@dataclass(frozen=True)
class CommParams:
    transmit_power: float = 2e-3  # W
    noise_power: float = 1e-8  # W (-50 dBm)
    bandwidth: float = 1e5  # Hz
    slot: float = 0.1  # s

    def __post_init__(self):
        for name in ("transmit_power", "noise_power", "bandwidth", "slot"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def snr_per_gain(self) -> float:
        return self.transmit_power / self.noise_power

    @property
    def bits_per_se(self) -> float:
        """Bits harvested per slot per bps/Hz of spectral efficiency."""
        return self.slot * self.bandwidth


@dataclass(eq=False)
class Sensor:
    position: np.ndarray
    params: CommParams
    model: MultiZoneModel | DistanceModel

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)


def snr(gain: float, params: CommParams) -> float:
    return gain * params.transmit_power / params.noise_power


def spectral_efficiency(gain: float, params: CommParams) -> float:
    # log1p keeps full relative precision at the low SNRs far from a sensor
    return math.log1p(snr(gain, params)) / LN2


def _xy(state) -> np.ndarray:
    if isinstance(state, Pose):
        return np.array([state.x, state.y])
    return np.asarray(state, dtype=float)[:2]


def comm_utility(state, sensor: Sensor) -> float:
    """Bits harvested from ``sensor`` during one slot spent at ``state``."""
    gain = sensor.model.gain(_xy(state), sensor.position)
    return sensor.params.bits_per_se * spectral_efficiency(gain, sensor.params)


def utility_many(points, sensor: Sensor, model=None):
    """Vectorised utility; points outside every zone yield 0 bits.

    Returns ``(bits, inside)``.
    """
    model = sensor.model if model is None else model
    g, inside = model_gain_many(model, points, sensor.position)
    bits = sensor.params.bits_per_se * np.log1p(g * sensor.params.snr_per_gain) / LN2
    return bits, inside


def _zone_at(sensor: Sensor, anchor) -> tuple[float, float]:
    beta, alpha, inside = sensor.model.zone_params(np.atleast_2d(_xy(anchor)))
    if not inside[0]:
        raise OutsideAllZones(f"anchor {_xy(anchor).tolist()} lies outside every zone")
    return float(beta[0]), float(alpha[0])


def _surrogate_arg(p, p0, sensor: Sensor, beta: float, alpha: float):
    d_min = sensor.model.d_min
    d = max(float(np.linalg.norm(p - sensor.position)), d_min)
    d0 = max(float(np.linalg.norm(p0 - sensor.position)), d_min)
    c = beta * sensor.params.snr_per_gain
    excess = c * (2.0 * d0 ** (-alpha) - d0 ** (-2.0 * alpha) * d**alpha)
    return 1.0 + excess, excess, c, d, d0


def surrogate(state, anchor, sensor: Sensor, eps_dom: float = EPS_DOM) -> float:
    """Concave lower bound on :func:`comm_utility`, tight at ``anchor``.

    The zone (hence ``beta``, ``alpha``) is the one governing the anchor.
    """
    beta, alpha = _zone_at(sensor, anchor)
    arg, excess, *_ = _surrogate_arg(_xy(state), _xy(anchor), sensor, beta, alpha)
    if arg <= eps_dom:
        raise DomainViolation(f"surrogate log argument {arg:.3e} <= {eps_dom:g}")
    return sensor.params.bits_per_se * math.log1p(excess) / LN2


def surrogate_gradient(state, anchor, sensor: Sensor, eps_dom: float = EPS_DOM) -> np.ndarray:
    """Gradient of :func:`surrogate` in ``(x, y, theta)``; the heading entry is 0."""
    beta, alpha = _zone_at(sensor, anchor)
    p = _xy(state)
    arg, _, c, d, d0 = _surrogate_arg(p, _xy(anchor), sensor, beta, alpha)
    if arg <= eps_dom:
        raise DomainViolation(f"surrogate log argument {arg:.3e} <= {eps_dom:g}")
    r = p - sensor.position
    dist = float(np.linalg.norm(r))
    if dist <= sensor.model.d_min or alpha == 0.0:
        return np.zeros(3)
    # d/dp of d**alpha = alpha d**(alpha-2) r
    darg = -c * d0 ** (-2.0 * alpha) * alpha * dist ** (alpha - 2.0) * r
    g = sensor.params.bits_per_se * darg / (arg * LN2)
    return np.array([g[0], g[1], 0.0])


def surrogate_terms(points, anchors, sensor: Sensor, beta, alpha):
    """Vectorised surrogate value, gradient and Hessian at ``points``.

    ``beta`` and ``alpha`` are per-point frozen zone parameters.  Returns
    ``(value, grad, hess, arg)`` with shapes ``(n,)``, ``(n, 2)``,
    ``(n, 2, 2)``, ``(n,)``.  Values where ``arg <= 0`` are ``-inf``.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    p0 = np.asarray(anchors, dtype=float).reshape(-1, 2)
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    d_min = sensor.model.d_min
    r = p - sensor.position
    dist = np.linalg.norm(r, axis=1)
    d = np.maximum(dist, d_min)
    d0 = np.maximum(np.linalg.norm(p0 - sensor.position, axis=1), d_min)
    c = beta * sensor.params.snr_per_gain
    k = c * d0 ** (-2.0 * alpha)
    excess = c * 2.0 * d0 ** (-alpha) - k * d**alpha
    arg = 1.0 + excess
    scale = sensor.params.bits_per_se / LN2
    ok = arg > 0
    safe_arg = np.where(ok, arg, 1.0)
    value = np.where(ok, scale * np.log1p(np.where(ok, excess, 0.0)), -np.inf)
    active = (dist > d_min) & (alpha != 0.0)
    safe_dist = np.where(active, dist, 1.0)
    # grad arg = -k alpha d^(alpha-2) r ;  hess arg = -k alpha [d^(a-2) I + (a-2) d^(a-4) r r^T]
    da = np.where(active, -k * alpha * safe_dist ** (alpha - 2.0), 0.0)
    grad_arg = da[:, None] * r
    outer = r[:, :, None] * r[:, None, :]
    hb = np.where(active, -k * alpha * (alpha - 2.0) * safe_dist ** (alpha - 4.0), 0.0)
    hess_arg = da[:, None, None] * np.eye(2) + hb[:, None, None] * outer
    grad = scale * grad_arg / safe_arg[:, None]
    hess = scale * (
        hess_arg / safe_arg[:, None, None]
        - grad_arg[:, :, None] * grad_arg[:, None, :] / (safe_arg**2)[:, None, None]
    )
    return value, grad, hess, arg
