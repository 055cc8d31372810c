"""Quadratic stage costs centered on a setpoint, with diagonal weights."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ConstraintBox, _as_vector

__all__ = ["QuadraticStageCost", "stage_cost", "stage_cost_min"]


@dataclass(frozen=True)
class QuadraticStageCost:
    """Stage cost ``(x - x_s)' Q (x - x_s) + (u - u_s)' R (u - u_s)``.

    ``Q`` and ``R`` are diagonal and positive definite, stored as their
    diagonals ``q_diag`` and ``r_diag``.
    """

    x_s: np.ndarray
    u_s: np.ndarray
    q_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        for name in ("x_s", "u_s", "q_diag", "r_diag"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        if self.q_diag.size != self.x_s.size:
            raise ValueError("q_diag must match the state dimension")
        if self.r_diag.size != self.u_s.size:
            raise ValueError("r_diag must match the input dimension")
        if not (np.all(self.q_diag > 0) and np.all(self.r_diag > 0)):
            raise ValueError("stage cost weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.x_s.size

    @property
    def m(self) -> int:
        return self.u_s.size

    def gradients(self, x: np.ndarray, u: np.ndarray):
        """Gradients of the stage cost in ``x`` and ``u``."""
        gx = 2.0 * self.q_diag * (np.asarray(x, dtype=float) - self.x_s)
        gu = 2.0 * self.r_diag * (np.asarray(u, dtype=float) - self.u_s)
        return gx, gu


def stage_cost(cost: QuadraticStageCost, x: np.ndarray, u: np.ndarray):
    """Evaluate the stage cost.  Broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != cost.n or u.shape[-1] != cost.m:
        raise ValueError("stage_cost dimensions do not match the cost")
    dx = x - cost.x_s
    du = u - cost.u_s
    val = np.sum(cost.q_diag * dx * dx, axis=-1) + np.sum(cost.r_diag * du * du, axis=-1)
    return float(val) if val.ndim == 0 else val


def stage_cost_min(cost: QuadraticStageCost, x: np.ndarray, box: Optional[ConstraintBox] = None):
    """Stage cost minimized over admissible inputs, in closed form.

    With diagonal ``R`` the minimizer over a box is the componentwise clip of
    ``u_s``, so the input part reduces to a constant distance term; it is zero
    whenever ``u_s`` lies inside the input box.  Broadcasts over leading axes
    of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != cost.n:
        raise ValueError("stage_cost_min dimensions do not match the cost")
    dx = x - cost.x_s
    val = np.sum(cost.q_diag * dx * dx, axis=-1)
    if box is not None:
        du = box.clip_input(cost.u_s) - cost.u_s
        val = val + float(np.sum(cost.r_diag * du * du))
    return float(val) if val.ndim == 0 else val
