"""Shared oracles and builders for the test suite.

Everything here is independent of the implementation under test: linear
systems are assembled explicitly, optimal values come from backward Riccati
recursions or batch quadratic forms, and tail weights are accumulated by
direct matrix powers.
"""

from __future__ import annotations

import numpy as np

from tailmpc import (ConstraintBox, DiscreteSystem, QuadraticStageCost,
                     TailController, dare_solve)


def make_linear_system(A0, B0, box=None, x_s=None, u_s=None) -> DiscreteSystem:
    """Wrap ``x+ = A0 x + B0 u`` as a vectorized DiscreteSystem."""
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    n, m = B0.shape
    if box is None:
        box = ConstraintBox.unbounded(n, m)

    def f(x, u):
        return np.asarray(x, dtype=float) @ A0.T + np.asarray(u, dtype=float) @ B0.T

    return DiscreteSystem(n=n, m=m, f=f, z_box=box, vectorized=True,
                          x_s=x_s, u_s=u_s)


def random_stable_pair(rng: np.random.Generator, n: int, m: int,
                       radius: float = 0.95):
    """Random (A0, B0) with the open loop scaled to the given spectral radius."""
    A0 = rng.standard_normal((n, n))
    A0 *= radius / max(np.max(np.abs(np.linalg.eigvals(A0))), 1e-12)
    B0 = rng.standard_normal((n, m))
    return A0, B0


def lq_problem(rng: np.random.Generator, n: int, m: int):
    """Random unconstrained linear-quadratic instance with an LQR tail law.

    Returns ``(sys, cost, kappa, A0, B0, K)`` with zero setpoint and an
    unbounded constraint box, so the tail law never saturates.
    """
    A0, B0 = random_stable_pair(rng, n, m, radius=float(rng.uniform(0.5, 1.15)))
    q_diag = rng.uniform(0.5, 2.0, size=n)
    r_diag = rng.uniform(0.1, 1.0, size=m)
    _, K = dare_solve(A0, B0, np.diag(q_diag), np.diag(r_diag))
    sys = make_linear_system(A0, B0, x_s=np.zeros(n), u_s=np.zeros(m))
    cost = QuadraticStageCost(x_s=np.zeros(n), u_s=np.zeros(m),
                              q_diag=q_diag, r_diag=r_diag)
    kappa = TailController(K=K, x_s=np.zeros(n), u_s=np.zeros(m),
                           u_lo=np.full(m, -np.inf), u_hi=np.full(m, np.inf))
    return sys, cost, kappa, A0, B0, K


def tail_weight(A0, B0, K, q_diag, r_diag, M: int) -> np.ndarray:
    """Terminal weight of an M-step tail under ``u = -K x``.

    ``sum_j (Acl^j)' (Q + K'RK) (Acl^j)`` accumulated by explicit powers.
    """
    Acl = A0 - B0 @ K
    Qbar = np.diag(q_diag) + K.T @ np.diag(r_diag) @ K
    P = np.zeros_like(Acl)
    G = np.eye(Acl.shape[0])
    for _ in range(M):
        P = P + G.T @ Qbar @ G
        G = Acl @ G
    return P


def riccati_value(A0, B0, q_diag, r_diag, P_terminal, N: int, x0) -> float:
    """Optimal N-step value with terminal weight, by backward recursion."""
    Q = np.diag(q_diag)
    R = np.diag(r_diag)
    P = np.asarray(P_terminal, dtype=float)
    for _ in range(N):
        BtP = B0.T @ P
        K = np.linalg.solve(R + BtP @ B0, BtP @ A0)
        P = Q + A0.T @ P @ A0 - A0.T @ P @ B0 @ K
        P = 0.5 * (P + P.T)
    x0 = np.asarray(x0, dtype=float)
    return float(x0 @ P @ x0)


def batch_quadratic_form(A0, B0, q_diag, r_diag, P_terminal, N: int, x0):
    """Explicit quadratic form of the N-step cost with terminal weight.

    Stacks the prediction as ``X = Gamma x0 + Phi U`` and condenses the
    objective to ``U' H U + 2 h' U + c``; returns ``(H, h, c)``.
    """
    n = A0.shape[0]
    m = B0.shape[1]
    Gamma = np.zeros((N * n, n))
    Phi = np.zeros((N * n, N * m))
    Apow = np.eye(n)
    for k in range(N):
        Apow = A0 @ Apow  # A0^{k+1}
        Gamma[k * n:(k + 1) * n] = Apow
        blk = B0.copy()
        for j in range(k, -1, -1):
            Phi[k * n:(k + 1) * n, j * m:(j + 1) * m] = blk
            blk = A0 @ blk
    Qt = np.zeros((N * n, N * n))
    for k in range(N - 1):
        Qt[k * n:(k + 1) * n, k * n:(k + 1) * n] = np.diag(q_diag)
    Qt[(N - 1) * n:, (N - 1) * n:] = P_terminal
    Rt = np.kron(np.eye(N), np.diag(r_diag))
    H = Phi.T @ Qt @ Phi + Rt
    h = Phi.T @ Qt @ Gamma @ np.asarray(x0, dtype=float)
    c = float(x0 @ (np.diag(q_diag) + Gamma.T @ Qt @ Gamma) @ x0)
    return H, h, c


def sublevel_samples(rng: np.random.Generator, cost: QuadraticStageCost,
                     eps: float, count: int) -> np.ndarray:
    """States drawn in the eps-sublevel set of the input-minimized cost."""
    n = cost.n
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    levels = eps * rng.uniform(size=count)
    return cost.x_s + np.sqrt(levels)[:, None] * z / np.sqrt(cost.q_diag)
