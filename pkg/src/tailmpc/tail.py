"""Tail controller synthesis and finite-horizon tail-cost evaluation.

The tail controller is a saturated LQR law around the setpoint.  Rolling it
out for ``M`` steps and summing stage costs gives the finite tail cost used
as the MPC terminal penalty; the evaluation is infinite whenever the rollout
leaves the constraint box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .cost import QuadraticStageCost, stage_cost
from .model import DiscreteSystem, _as_vector, linearize

__all__ = [
    "RolloutError",
    "SynthesisError",
    "TailController",
    "TailEvaluation",
    "dare_solve",
    "finite_tail_cost",
    "lqr_tail_controller",
    "rollout",
]


class SynthesisError(RuntimeError):
    """Raised when Riccati synthesis fails to produce a stabilizing gain."""


class RolloutError(RuntimeError):
    """Raised when a rollout produces non-finite states."""


def dare_solve(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-12, max_iter: int = 100_000):
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA`` from ``P = Q`` until
    successive iterates agree to ``tol`` in max norm.  Returns ``(P, K)`` with
    the gain ``K = (R + B'PB)^-1 B'PA``.

    Raises
    ------
    SynthesisError
        If the iteration does not converge, or the closed loop ``A - BK`` is
        not Schur stable.  The message reports the closed-loop spectral
        radius of the best iterate.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n:
        raise ValueError("A must be square and B row-compatible with A")
    m = B.shape[1]
    if Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError("Q and R dimensions must match A and B")

    P = Q.copy()
    converged = False
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if delta < tol:
            converged = True
            break

    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    radius = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
    if not converged:
        raise SynthesisError(
            f"Riccati iteration did not converge in {max_iter} iterations "
            f"(closed-loop spectral radius of best iterate: {radius:.6f})"
        )
    residual = float(np.max(np.abs(Q + A.T @ P @ A - A.T @ P @ B @ K - P)))
    if not residual < 1e-10:
        raise SynthesisError(f"Riccati residual too large after convergence: {residual:.3e}")
    if not radius < 1.0:
        raise SynthesisError(f"closed loop is not Schur stable: spectral radius {radius:.6f}")
    return P, K


@dataclass(frozen=True)
class TailController:
    """Saturated linear law ``u = clip(u_s - K (x - x_s), u_lo, u_hi)``."""

    K: np.ndarray
    x_s: np.ndarray
    u_s: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        for name in ("x_s", "u_s", "u_lo", "u_hi"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        m, n = self.K.shape
        if self.x_s.size != n or self.u_s.size != m:
            raise ValueError("gain dimensions do not match the setpoint")
        if self.u_lo.size != m or self.u_hi.size != m:
            raise ValueError("input bound dimensions do not match the gain")
        if not np.all((self.u_s > self.u_lo) & (self.u_s < self.u_hi)):
            raise ValueError("u_s must lie strictly inside the input bounds")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the law.  Broadcasts over leading axes of ``x``."""
        x = np.asarray(x, dtype=float)
        raw = self.u_s - (x - self.x_s) @ self.K.T
        return np.clip(raw, self.u_lo, self.u_hi)

    def unsaturated_mask(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of input channels away from their bounds at ``x``."""
        x = np.asarray(x, dtype=float)
        raw = self.u_s - (x - self.x_s) @ self.K.T
        return (raw > self.u_lo) & (raw < self.u_hi)


def lqr_tail_controller(sys: DiscreteSystem, cost: QuadraticStageCost,
                        K: Optional[np.ndarray] = None) -> TailController:
    """Build the tail law from LQR at the setpoint (or a supplied gain).

    Linearizes the system at ``(x_s, u_s)`` and solves the Riccati equation
    with the stage-cost weights; saturation bounds come from the system's
    input box.
    """
    if K is None:
        A, B = linearize(sys, cost.x_s, cost.u_s)
        _, K = dare_solve(A, B, np.diag(cost.q_diag), np.diag(cost.r_diag))
    return TailController(K=K, x_s=cost.x_s, u_s=cost.u_s,
                          u_lo=sys.z_box.u_lo, u_hi=sys.z_box.u_hi)


def rollout(sys: DiscreteSystem, kappa: Callable[[np.ndarray], np.ndarray],
            x0: np.ndarray, steps: int):
    """Run the controlled system ``steps`` steps from ``x0``.

    Returns ``(states, inputs)`` of shapes ``(steps + 1, n)`` and
    ``(steps, m)``.

    Raises
    ------
    RolloutError
        On the first non-finite state, reporting the step index.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError("rollout expects a 1-D state of system dimension")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    states = np.empty((steps + 1, sys.n))
    inputs = np.empty((steps, sys.m))
    states[0] = x0
    for k in range(steps):
        u = np.asarray(kappa(states[k]), dtype=float)
        inputs[k] = u
        states[k + 1] = sys.f(states[k], u)
        if not np.all(np.isfinite(states[k + 1])):
            raise RolloutError(f"non-finite state at rollout step {k + 1}")
    return states, inputs


@dataclass
class TailEvaluation:
    """Finite tail cost of a kappa-rollout, with the rollout itself.

    ``value`` is the sum of ``per_step_costs`` when every visited
    (state, input) pair lies in the constraint box, and ``math.inf``
    otherwise; ``feasible`` and ``first_violation`` make the marker explicit.
    """

    value: float
    states: np.ndarray
    inputs: np.ndarray
    per_step_costs: np.ndarray
    feasible: bool
    first_violation: Optional[int] = None


def finite_tail_cost(sys: DiscreteSystem, cost: QuadraticStageCost,
                     kappa: Callable[[np.ndarray], np.ndarray],
                     x0: np.ndarray, M: int, tol: float = 0.0) -> TailEvaluation:
    """Evaluate the ``M``-step tail cost under ``kappa`` from ``x0``.

    Sums the stage costs of the first ``M`` rollout pairs.  Membership in the
    constraint box is required for each of those pairs (checked with absolute
    slack ``tol``); on the first violation the value is the infeasibility
    marker ``math.inf`` while the rollout data and per-step costs are still
    returned for diagnostics.
    """
    if M < 1:
        raise ValueError("tail horizon M must be at least 1")
    states, inputs = rollout(sys, kappa, x0, M)
    costs = np.empty(M)
    first_violation = None
    for k in range(M):
        costs[k] = stage_cost(cost, states[k], inputs[k])
        if first_violation is None and not sys.z_box.contains(states[k], inputs[k], tol=tol):
            first_violation = k
    feasible = first_violation is None
    running = 0.0
    for k in range(M):
        running += costs[k]
    value = running if feasible else math.inf
    return TailEvaluation(value=value, states=states, inputs=inputs,
                          per_step_costs=costs, feasible=feasible,
                          first_violation=first_violation)
