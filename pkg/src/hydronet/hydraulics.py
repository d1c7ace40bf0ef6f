"""Algebraic part of the network DAE: friction, loop laws and consumer demands.

The stacked residual ``g(q, y, u_H)`` has the consumer rows ``q_h y_h - u_H`` first
(normalized power units, m^3/s times relative energy density) followed by the
loop rows ``G [v_i |v_i|] / rho`` (kinematic pressure, J/kg).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import FlowBasis, PipeEdge

__all__ = [
    "HydraulicsError",
    "NewtonConfig",
    "HydraulicState",
    "AlgebraicResidual",
    "pressure_drop",
    "loop_residual",
    "consumer_residual",
    "residual",
    "jacobian",
    "initial_guess",
    "solve_flows",
]

logger = logging.getLogger(__name__)

GRAVITY = 9.81
MIN_CONSUMER_FLOW = 1e-9


class HydraulicsError(RuntimeError):
    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 10
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class HydraulicState:
    q: np.ndarray
    v: np.ndarray
    edge_flows: np.ndarray
    residual_norm: float
    iterations: int


@dataclass(frozen=True)
class AlgebraicResidual:
    consumer: np.ndarray
    loop: np.ndarray
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "g", np.concatenate([self.consumer, self.loop]))


def pressure_drop(edge: PipeEdge, v: float, rho: float = 1000.0) -> float:
    """Darcy-Weisbach drop along ``edge`` plus the hydrostatic term, in Pa."""
    return edge.friction * rho * edge.length / (2.0 * edge.diameter) * abs(v) * v \
        + rho * GRAVITY * edge.height_delta


def loop_residual(basis: FlowBasis, q: np.ndarray) -> np.ndarray:
    """Friction pressure sum around every fundamental cycle, in Pa."""
    v = basis.velocities(q)
    return basis.G @ (v * np.abs(v))


def consumer_residual(basis: FlowBasis, q: np.ndarray, y: np.ndarray,
                      u_H: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        bad = np.flatnonzero(y <= 0)
        raise HydraulicsError(f"non-positive consumer energy density at consumers {bad.tolist()}")
    H = basis.n_consumers
    return np.asarray(q, dtype=float)[:H] * y - np.asarray(u_H, dtype=float)


def residual(basis: FlowBasis, q, y, u_H) -> AlgebraicResidual:
    return AlgebraicResidual(consumer_residual(basis, q, y, u_H),
                             loop_residual(basis, q) / basis.rho)


def jacobian(basis: FlowBasis, q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of the stacked residual; d(|v|v)/dv = 2|v| (0 at v = 0)."""
    H, L = basis.n_consumers, basis.n_flows
    J = np.zeros((L, L))
    J[np.arange(H), np.arange(H)] = y
    if L > H:
        v = basis.velocities(q)
        J[H:] = (basis.G * (2.0 * np.abs(v))) @ basis.K / basis.rho
    return J


def initial_guess(basis: FlowBasis, y, u_H) -> np.ndarray:
    q0 = np.zeros(basis.n_flows)
    q0[: basis.n_consumers] = np.asarray(u_H, dtype=float) / np.asarray(y, dtype=float)
    return q0


def _stacked(basis: FlowBasis, q, y, u_H) -> np.ndarray:
    H = basis.n_consumers
    v = basis.K @ q
    return np.concatenate([q[:H] * y - u_H, basis.G @ (v * np.abs(v)) / basis.rho])


def _newton_step(basis: FlowBasis, q, y, g) -> np.ndarray:
    """Solve ``J dq = -g`` using the block lower-triangular structure of ``J``.

    If the loop block is singular (typically chords at exactly zero flow,
    where d(|v|v)/dv = 0), the speeds in the derivative are floored at a small
    fraction of the largest speed for this step only.
    """
    H = basis.n_consumers
    step = np.empty_like(q)
    step[:H] = -g[:H] / y
    if q.size > H:
        v = np.abs(basis.K @ q)
        for floor in (0.0, 1e-3 * max(v.max(), 1e-12)):
            J_loop = (basis.G * (2.0 * np.maximum(v, floor))) @ basis.K / basis.rho
            rhs = -g[H:] - J_loop[:, :H] @ step[:H]
            try:
                step[H:] = np.linalg.solve(J_loop[:, H:], rhs)
                break
            except np.linalg.LinAlgError:
                if floor > 0:
                    raise
    return step


def solve_flows(basis: FlowBasis, y, u_H, q0=None, cfg: NewtonConfig = NewtonConfig()
                ) -> HydraulicState:
    """Damped Newton solve of ``g(q, y, u_H) = 0``.

    Consumer rows only involve their own flow, so each step solves the
    consumer block by division and the small loop block densely.

    Raises
    ------
    HydraulicsError
        On a singular Jacobian or when ``cfg.max_iter`` iterations do not reach
        ``cfg.tol``; the exception carries the iteration trace.
    """
    y = np.asarray(y, dtype=float)
    u_H = np.asarray(u_H, dtype=float)
    if np.any(y <= 0):
        consumer_residual(basis, np.zeros(basis.n_flows), y, u_H)
    H = basis.n_consumers
    q = initial_guess(basis, y, u_H) if q0 is None else np.array(q0, dtype=float)
    q[:H] = np.maximum(q[:H], MIN_CONSUMER_FLOW)
    g = _stacked(basis, q, y, u_H)
    norm = float(np.max(np.abs(g)))
    trace = [(0, norm, 1.0)]
    it = 0
    while norm > cfg.tol:
        if it >= cfg.max_iter:
            raise HydraulicsError(f"Newton did not converge in {cfg.max_iter} iterations "
                                  f"(|g|={norm:.3e})", trace)
        it += 1
        try:
            step = _newton_step(basis, q, y, g)
        except np.linalg.LinAlgError as exc:
            raise HydraulicsError("singular hydraulic Jacobian", trace) from exc
        phi0 = float(g @ g)
        alpha = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = q + alpha * step
            trial[:H] = np.maximum(trial[:H], MIN_CONSUMER_FLOW)
            g_trial = _stacked(basis, trial, y, u_H)
            if g_trial @ g_trial <= (1.0 - 2.0 * cfg.armijo * alpha) * phi0:
                break
            alpha *= 0.5
        q, g = trial, g_trial
        norm = float(np.max(np.abs(g)))
        trace.append((it, norm, alpha))
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("newton iteration",
                         extra={"iteration": it, "residual": norm, "damping": alpha})
        if not np.isfinite(norm):
            raise HydraulicsError("Newton iteration diverged", trace)
    v = basis.velocities(q)
    return HydraulicState(q, v, basis.P @ q, norm, it)
