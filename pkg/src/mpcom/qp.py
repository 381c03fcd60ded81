"""Dense convex QP solve with a KKT certificate.

Thin wrapper over ``quadprog`` (Goldfarb-Idnani dual active set), which is
deterministic and exact up to round-off for the small strictly convex
problems the planner produces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import quadprog


class Infeasible(RuntimeError):
    """The convexified constraint set is empty."""


class QPNumericalFailure(RuntimeError):
    pass


@dataclass
class QPSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    primal_residual: float
    active: np.ndarray


def solve_qp(P, q, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None, tol: float = 1e-6) -> QPSolution:
    """Minimise ``0.5 x'Px + q'x`` s.t. ``A_ineq x <= b_ineq`` and ``A_eq x = b_eq``.

    Raises :class:`Infeasible` when no point satisfies the constraints and
    :class:`QPNumericalFailure` when the returned point fails the KKT check
    at relative tolerance ``tol``.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    blocks, rhs = [], []
    meq = 0
    if A_eq is not None and len(A_eq):
        blocks.append(np.asarray(A_eq, dtype=float))
        rhs.append(np.asarray(b_eq, dtype=float))
        meq = len(b_eq)
    if A_ineq is not None and len(A_ineq):
        blocks.append(-np.asarray(A_ineq, dtype=float))
        rhs.append(-np.asarray(b_ineq, dtype=float))
    if blocks:
        C = np.vstack(blocks)
        b = np.concatenate(rhs)
    else:
        C = np.zeros((0, n))
        b = np.zeros(0)
    Ps = 0.5 * (P + P.T)
    try:
        x, f, _, _, lam, act = quadprog.solve_qp(Ps, -q, C.T.copy(), b, meq)
    except ValueError as exc:
        msg = str(exc)
        if "inconsistent" in msg:
            raise Infeasible(msg) from exc
        raise QPNumericalFailure(msg) from exc
    stat = Ps @ x + q - C.T @ lam
    scale = max(1.0, float(np.max(np.abs(q), initial=0.0)), float(np.max(np.abs(Ps))) * float(np.max(np.abs(x), initial=0.0)))
    kkt = float(np.max(np.abs(stat), initial=0.0)) / scale
    viol = C @ x - b
    if meq:
        primal = max(float(np.max(np.abs(viol[:meq]))), float(np.max(-viol[meq:], initial=0.0)))
    else:
        primal = float(np.max(-viol, initial=0.0))
    primal_rel = primal / max(1.0, float(np.max(np.abs(b), initial=0.0)))
    if kkt > tol or primal_rel > tol:
        raise QPNumericalFailure(f"KKT residual {kkt:.2e}, primal residual {primal_rel:.2e} above {tol:g}")
    return QPSolution(x=x, objective=float(0.5 * x @ Ps @ x + q @ x), kkt_residual=kkt, primal_residual=primal, active=act[act > 0] - 1)
