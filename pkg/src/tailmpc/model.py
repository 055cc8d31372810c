"""Plant models: constraint boxes, the four-tank benchmark, discretization.

The central abstraction is :class:`DiscreteSystem`, a discrete-time transition
map together with its box constraints.  The four-tank laboratory process is
shipped as the reference nonlinear plant; any other plant can be wrapped in a
``DiscreteSystem`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ConstraintBox",
    "DiscreteSystem",
    "FourTankParams",
    "LinearizationError",
    "ScalarPlantParams",
    "euler_discretize",
    "four_tank_vector_field",
    "linearize",
    "scalar_discretize",
]


class LinearizationError(RuntimeError):
    """Raised when finite differencing meets non-finite values."""


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConstraintBox:
    """Box constraints on states and inputs (the admissible pair set).

    Bounds may be ``+/-inf``.  Lower bounds must be strictly below upper
    bounds componentwise.
    """

    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "u_lo", "u_hi"):
            object.__setattr__(self, name, _as_vector(getattr(self, name), name))
        if self.x_lo.shape != self.x_hi.shape:
            raise ValueError("state bounds must have matching shapes")
        if self.u_lo.shape != self.u_hi.shape:
            raise ValueError("input bounds must have matching shapes")
        if not np.all(self.x_lo < self.x_hi):
            raise ValueError("x_lo must be strictly below x_hi componentwise")
        if not np.all(self.u_lo < self.u_hi):
            raise ValueError("u_lo must be strictly below u_hi componentwise")

    @property
    def n(self) -> int:
        return self.x_lo.size

    @property
    def m(self) -> int:
        return self.u_lo.size

    @staticmethod
    def unbounded(n: int, m: int) -> "ConstraintBox":
        inf = np.inf
        return ConstraintBox(
            x_lo=np.full(n, -inf), x_hi=np.full(n, inf),
            u_lo=np.full(m, -inf), u_hi=np.full(m, inf),
        )

    def contains(self, x: np.ndarray, u: np.ndarray, tol: float = 0.0) -> bool:
        """Membership of the pair ``(x, u)`` up to an absolute slack."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return bool(
            np.all(x >= self.x_lo - tol) and np.all(x <= self.x_hi + tol)
            and np.all(u >= self.u_lo - tol) and np.all(u <= self.u_hi + tol)
        )

    def state_violation(self, x: np.ndarray) -> np.ndarray:
        """Worst componentwise state-box violation, 0 inside.  Batched."""
        x = np.asarray(x, dtype=float)
        over = np.maximum(x - self.x_hi, 0.0)
        under = np.maximum(self.x_lo - x, 0.0)
        return np.max(np.maximum(over, under), axis=-1)

    def input_violation(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        over = np.maximum(u - self.u_hi, 0.0)
        under = np.maximum(self.u_lo - u, 0.0)
        return np.max(np.maximum(over, under), axis=-1)

    def clip_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.u_lo, self.u_hi)


@dataclass
class DiscreteSystem:
    """Discrete-time system ``x+ = f(x, u)`` with box constraints.

    Parameters
    ----------
    n, m : int
        State and input dimensions.
    f : callable
        Transition map taking ``(x, u)`` 1-D arrays to a 1-D array.  When
        ``vectorized`` is true, ``f`` must also accept stacked arguments of
        shape ``(..., n)`` / ``(..., m)`` and broadcast over leading axes.
    z_box : ConstraintBox
        Admissible set for state/input pairs.
    x_s, u_s : array, optional
        Declared equilibrium.  When both are given, ``f(x_s, u_s) == x_s``
        is required to hold within 1e-10 and the pair must lie strictly
        inside ``z_box``.
    """

    n: int
    m: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    z_box: ConstraintBox
    vectorized: bool = False
    x_s: Optional[np.ndarray] = None
    u_s: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.z_box.n != self.n or self.z_box.m != self.m:
            raise ValueError("constraint box dimensions do not match the system")
        if (self.x_s is None) != (self.u_s is None):
            raise ValueError("provide both x_s and u_s or neither")
        if self.x_s is not None:
            self.x_s = _as_vector(self.x_s, "x_s")
            self.u_s = _as_vector(self.u_s, "u_s")
            if self.x_s.size != self.n or self.u_s.size != self.m:
                raise ValueError("equilibrium dimensions do not match the system")
            residual = float(np.max(np.abs(self.f(self.x_s, self.u_s) - self.x_s)))
            if not residual < 1e-10:
                raise ValueError(
                    f"declared equilibrium is not a fixed point: residual {residual:.3e}"
                )
            interior = (
                np.all(self.x_s > self.z_box.x_lo) and np.all(self.x_s < self.z_box.x_hi)
                and np.all(self.u_s > self.z_box.u_lo) and np.all(self.u_s < self.z_box.u_hi)
            )
            if not interior:
                raise ValueError(
                    "declared equilibrium must lie strictly inside the constraint box"
                )

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.f(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True)
class FourTankParams:
    """Physical parameters of the quadruple-tank process (cm, s units).

    ``A`` are tank cross-sections, ``a`` outlet cross-sections, ``b`` the two
    valve flow splits in (0, 1), ``g`` gravity, ``Ts`` the sample time.
    """

    A: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g: float = 981.0
    Ts: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "A", _as_vector(self.A, "A"))
        object.__setattr__(self, "a", _as_vector(self.a, "a"))
        object.__setattr__(self, "b", _as_vector(self.b, "b"))
        if self.A.size != 4 or self.a.size != 4:
            raise ValueError("A and a must have four entries")
        if self.b.size != 2:
            raise ValueError("b must have two entries")
        if not (np.all(self.A > 0) and np.all(self.a > 0)):
            raise ValueError("tank and outlet cross-sections must be positive")
        if not np.all((self.b > 0) & (self.b < 1)):
            raise ValueError("valve splits must lie strictly in (0, 1)")
        if not (self.g > 0 and self.Ts >= 0):
            raise ValueError("g must be positive and Ts nonnegative")


def four_tank_vector_field(p: FourTankParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Continuous-time level dynamics of the four-tank process.

    Outflows follow Torricelli's law ``a_i * sqrt(2 g h_i)``; levels are
    clamped at zero inside the square root so the field is total.  Inputs
    ``u_1, u_2`` are pump flows, split by the valve fractions ``b``.
    Broadcasts over leading axes of ``x`` (shape ``(..., 4)``) and ``u``
    (shape ``(..., 2)``).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("four_tank_vector_field requires finite states and inputs")
    out = p.a * np.sqrt(2.0 * p.g * np.maximum(x, 0.0))
    b1, b2 = p.b
    dx = np.empty_like(x)
    dx[..., 0] = (-out[..., 0] + out[..., 2] + b1 * u[..., 0]) / p.A[0]
    dx[..., 1] = (-out[..., 1] + out[..., 3] + b2 * u[..., 1]) / p.A[1]
    dx[..., 2] = (-out[..., 2] + (1.0 - b2) * u[..., 1]) / p.A[2]
    dx[..., 3] = (-out[..., 3] + (1.0 - b1) * u[..., 0]) / p.A[3]
    return dx


def euler_discretize(
    p: FourTankParams,
    z_box: Optional[ConstraintBox] = None,
    x_s: Optional[np.ndarray] = None,
    u_s: Optional[np.ndarray] = None,
) -> DiscreteSystem:
    """Explicit-Euler discretization of the four-tank process.

    The Euler step is clamped at zero from below: tank levels cannot go
    negative.  With ``Ts = 0`` the map is the identity in ``x``.
    """
    if z_box is None:
        z_box = ConstraintBox.unbounded(4, 2)

    def f(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.maximum(x + p.Ts * four_tank_vector_field(p, x, u), 0.0)

    return DiscreteSystem(n=4, m=2, f=f, z_box=z_box, vectorized=True, x_s=x_s, u_s=u_s)


@dataclass(frozen=True)
class ScalarPlantParams:
    """Scalar test plant ``x+ = a x + b u`` (already discrete).

    Exists so configs can drive the full pipeline on a system whose
    controllability constants have closed forms.  ``Ts`` only scales the
    reported time axis.
    """

    a: float
    b: float
    Ts: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("a and b must be finite")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")


def scalar_discretize(
    p: ScalarPlantParams,
    z_box: Optional[ConstraintBox] = None,
    x_s: Optional[np.ndarray] = None,
    u_s: Optional[np.ndarray] = None,
) -> DiscreteSystem:
    """Wrap the scalar plant as a :class:`DiscreteSystem` (n = m = 1)."""
    if z_box is None:
        z_box = ConstraintBox.unbounded(1, 1)

    def f(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return p.a * x + p.b * u

    return DiscreteSystem(n=1, m=1, f=f, z_box=z_box, vectorized=True, x_s=x_s, u_s=u_s)


def linearize(sys: DiscreteSystem, x: np.ndarray, u: np.ndarray):
    """Jacobians of the transition map by central finite differences.

    Steps are per coordinate, ``h = max(1e-6, 1e-6 * |coordinate|)``.
    Returns ``(A, B)`` with shapes ``(n, n)`` and ``(n, m)``.

    Raises
    ------
    LinearizationError
        If any perturbed evaluation is non-finite.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (sys.n,) or u.shape != (sys.m,):
        raise ValueError("linearize expects 1-D state and input of system dimensions")
    hx = np.maximum(1e-6, 1e-6 * np.abs(x))
    hu = np.maximum(1e-6, 1e-6 * np.abs(u))

    if sys.vectorized:
        Xp = np.repeat(x[None, :], sys.n, axis=0) + np.diag(hx)
        Xm = np.repeat(x[None, :], sys.n, axis=0) - np.diag(hx)
        Up = np.repeat(u[None, :], sys.m, axis=0) + np.diag(hu)
        Um = np.repeat(u[None, :], sys.m, axis=0) - np.diag(hu)
        fxp = sys.f(Xp, np.broadcast_to(u, (sys.n, sys.m)))
        fxm = sys.f(Xm, np.broadcast_to(u, (sys.n, sys.m)))
        fup = sys.f(np.broadcast_to(x, (sys.m, sys.n)), Up)
        fum = sys.f(np.broadcast_to(x, (sys.m, sys.n)), Um)
        A = (fxp - fxm).T / (2.0 * hx)
        B = (fup - fum).T / (2.0 * hu)
    else:
        A = np.empty((sys.n, sys.n))
        B = np.empty((sys.n, sys.m))
        for i in range(sys.n):
            e = np.zeros(sys.n)
            e[i] = hx[i]
            A[:, i] = (sys.f(x + e, u) - sys.f(x - e, u)) / (2.0 * hx[i])
        for j in range(sys.m):
            e = np.zeros(sys.m)
            e[j] = hu[j]
            B[:, j] = (sys.f(x, u + e) - sys.f(x, u - e)) / (2.0 * hu[j])

    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise LinearizationError("non-finite Jacobian entries at the requested point")
    return A, B
