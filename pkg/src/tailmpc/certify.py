"""Stability and performance certification for finite-tail-cost MPC.

Two layers live here.  The analytic layer turns an exponential cost decay
pair ``(rho, C)`` plus a validity level ``eps`` into horizon thresholds and
descent margins (all closed forms, plus one small LP).  The empirical layer
estimates those constants for a concrete plant and tail law by sampling
sublevel sets of the pointwise-minimal stage cost and rolling the tail law
out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .cost import QuadraticStageCost, stage_cost, stage_cost_min
from .model import DiscreteSystem
from .tail import rollout

__all__ = [
    "CertificationError",
    "ControllabilityCertificate",
    "HorizonCertificate",
    "SamplingPlan",
    "c_M_analytic",
    "c_M_lp",
    "estimate_controllability",
    "gamma_k",
    "gamma_table",
    "horizon_certificate",
    "m_lower_threshold",
    "no_terminal_horizon_bound",
    "relaxed_clf_margin",
]


class CertificationError(RuntimeError):
    """Raised when no candidate level validates; carries diagnostics."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


def _check_rho_C(rho: float, C: float):
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"decay rate rho must lie in [0, 1), got {rho}")
    if not C >= 1.0:
        raise ValueError(f"overshoot constant C must be at least 1, got {C}")


def gamma_k(rho: float, C: float, k) -> float:
    """Cost-controllability sum ``gamma_k = C (1 - rho^k) / (1 - rho)``.

    ``k`` is a nonnegative integer or ``math.inf``; the limit is
    ``C / (1 - rho)``.
    """
    _check_rho_C(rho, C)
    if k == math.inf:
        return C / (1.0 - rho)
    if not (isinstance(k, (int, np.integer)) and k >= 0):
        raise ValueError("k must be a nonnegative integer or math.inf")
    return C * (1.0 - rho ** int(k)) / (1.0 - rho)


def gamma_table(rho: float, C: float, k_max: int) -> np.ndarray:
    """Analytic table ``[gamma_0, ..., gamma_k_max]``."""
    _check_rho_C(rho, C)
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    ks = np.arange(k_max + 1)
    return C * (1.0 - rho ** ks) / (1.0 - rho)


def c_M_analytic(rho: float, C: float, M: int) -> float:
    """Closed-form tail growth constant ``C rho^M (1 - rho) / (1 - rho^M)``."""
    _check_rho_C(rho, C)
    if M < 1:
        raise ValueError("tail horizon M must be at least 1")
    if rho == 0.0:
        return 0.0
    return C * rho ** M * (1.0 - rho) / (1.0 - rho ** M)


def c_M_lp(rho: float, C: float, M: int) -> float:
    """Tail growth constant by solving its defining linear program.

    Maximizes the normalized cost at step ``M`` subject to the first ``M``
    normalized costs summing to one and each bounding the last through the
    decay pair.  Agrees with :func:`c_M_analytic`, where every constraint is
    active at the optimum.
    """
    _check_rho_C(rho, C)
    if M < 1:
        raise ValueError("tail horizon M must be at least 1")
    # variables l_0 .. l_M, objective max l_M
    c = np.zeros(M + 1)
    c[M] = -1.0
    A_eq = np.zeros((1, M + 1))
    A_eq[0, :M] = 1.0
    b_eq = np.array([1.0])
    A_ub = np.zeros((M, M + 1))
    for k in range(M):
        A_ub[k, M] = 1.0
        A_ub[k, k] = -C * rho ** (M - k)
    b_ub = np.zeros(M)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0.0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"tail growth LP failed: {res.message}")
    return float(-res.fun)


def m_lower_threshold(rho: float, C: float) -> float:
    """Smallest real tail horizon with a positive relaxed-CLF margin.

    Equals ``log(C) / log(1 / rho)``; any integer ``M`` strictly above it
    gives ``relaxed_clf_margin > 0``.  Returns 0 when ``rho == 0`` or
    ``C == 1``.
    """
    _check_rho_C(rho, C)
    if rho == 0.0:
        return 0.0
    return math.log(C) / math.log(1.0 / rho)


def relaxed_clf_margin(rho: float, C: float, M: int) -> float:
    """Decrease fraction ``alpha_M = 1 - C rho^M`` of the tail cost."""
    _check_rho_C(rho, C)
    if M < 1:
        raise ValueError("tail horizon M must be at least 1")
    return 1.0 - C * rho ** M


def no_terminal_horizon_bound(gamma: float) -> float:
    """Classical horizon bound without terminal ingredients.

    ``2 log(gamma) / (log(gamma) - log(gamma - 1))`` for ``gamma > 1``; tends
    to 0 as ``gamma -> 1+``.  Used for side-by-side comparison with the
    finite-tail thresholds.
    """
    if gamma < 1.0:
        raise ValueError("gamma must be at least 1")
    if gamma == 1.0:
        return 0.0
    return 2.0 * math.log(gamma) / (math.log(gamma) - math.log(gamma - 1.0))


@dataclass(frozen=True)
class ControllabilityCertificate:
    """Exponential cost-decay certificate for a tail law.

    Asserts, for every state whose minimal stage cost is at most ``eps``,
    that the tail-law rollout keeps stage costs below ``C rho^k`` times the
    initial minimal cost while respecting the constraint box.  The analytic
    ``gamma_table`` is derived from ``(rho, C)``; when produced by
    :func:`estimate_controllability` the measured counterparts ride along.
    """

    rho: float
    C: float
    eps: float
    gamma_table: np.ndarray
    gamma_inf: float
    gamma_table_empirical: Optional[np.ndarray] = None
    c_M_empirical_table: Optional[np.ndarray] = None

    def __post_init__(self):
        _check_rho_C(self.rho, self.C)
        if not self.eps > 0:
            raise ValueError("validity level eps must be positive")
        tab = np.asarray(self.gamma_table, dtype=float)
        object.__setattr__(self, "gamma_table", tab)
        if tab.ndim != 1 or tab.size < 1:
            raise ValueError("gamma_table must be a nonempty 1-D array")
        ref = gamma_table(self.rho, self.C, tab.size - 1)
        if not np.allclose(tab, ref, rtol=1e-12, atol=1e-12):
            raise ValueError("gamma_table does not match the decay pair")
        if not math.isclose(self.gamma_inf, self.C / (1.0 - self.rho), rel_tol=1e-12):
            raise ValueError("gamma_inf does not match the decay pair")

    @property
    def k_max(self) -> int:
        return self.gamma_table.size - 1

    def c_M_measured(self, M: int) -> Optional[float]:
        """Measured tail growth at horizon ``M``, when available."""
        tab = self.c_M_empirical_table
        if tab is None or not 1 <= M < tab.size:
            return None
        val = float(tab[M])
        return None if math.isnan(val) else val


@dataclass(frozen=True)
class SamplingPlan:
    """Sampling layout for :func:`estimate_controllability`.

    ``eps_grid`` lists candidate validity levels, strictly descending; the
    largest level whose samples validate is accepted.  Boundary samples sit
    exactly on the minimal-cost ellipsoid of each level, interior samples
    fill the sublevel set uniformly in cost value.  ``C_max`` bounds the
    admissible overshoot constant: candidate fits above it are rejected as
    evidence of non-decay over the ``k_max``-step window.
    """

    eps_grid: tuple
    n_boundary: int = 200
    n_interior: int = 200
    k_max: int = 40
    seed: int = 0
    rho_step: float = 0.005
    rho_max: float = 0.995
    C_max: float = 50.0

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eps_grid)
        object.__setattr__(self, "eps_grid", grid)
        if len(grid) == 0 or any(e <= 0 for e in grid):
            raise ValueError("eps_grid must be a nonempty tuple of positive levels")
        if any(a <= b for a, b in zip(grid, grid[1:])):
            raise ValueError("eps_grid must be strictly descending")
        if self.n_boundary < 1 or self.n_interior < 0:
            raise ValueError("sample counts must be positive")
        if self.k_max < 2:
            raise ValueError("k_max must be at least 2")
        if not (0 < self.rho_step <= 0.1 and 0 < self.rho_max < 1):
            raise ValueError("rho grid must satisfy 0 < step <= 0.1 and 0 < max < 1")
        if self.C_max < 1.0:
            raise ValueError("C_max must be at least 1")

    def rho_grid(self) -> np.ndarray:
        return np.arange(0.0, self.rho_max + 0.5 * self.rho_step, self.rho_step)


def _draw_samples(cost: QuadraticStageCost, eps: float, plan: SamplingPlan,
                  rng: np.random.Generator) -> np.ndarray:
    """Boundary plus interior samples of the minimal-cost sublevel set."""
    n = cost.n
    scale = 1.0 / np.sqrt(cost.q_diag)
    zb = rng.standard_normal((plan.n_boundary, n))
    zb /= np.linalg.norm(zb, axis=1, keepdims=True)
    pts = [cost.x_s + math.sqrt(eps) * zb * scale]
    if plan.n_interior > 0:
        zi = rng.standard_normal((plan.n_interior, n))
        zi /= np.linalg.norm(zi, axis=1, keepdims=True)
        levels = eps * rng.uniform(size=plan.n_interior)
        pts.append(cost.x_s + np.sqrt(levels)[:, None] * zi * scale)
    return np.vstack(pts)


def _rollout_costs(sys: DiscreteSystem, cost: QuadraticStageCost,
                   kappa: Callable[[np.ndarray], np.ndarray],
                   X0: np.ndarray, k_max: int):
    """Stage costs and box feasibility of kappa-rollouts from each row of X0.

    Returns ``(costs, ok)`` with ``costs`` of shape ``(S, k_max)`` holding
    the stage cost of each visited pair and ``ok`` of shape ``(S,)`` true
    where every pair stayed in the box with finite states.
    """
    S = X0.shape[0]
    costs = np.full((S, k_max), np.nan)
    ok = np.ones(S, dtype=bool)
    box = sys.z_box
    if sys.vectorized:
        x = X0.copy()
        for k in range(k_max):
            u = np.asarray(kappa(x), dtype=float)
            costs[:, k] = stage_cost(cost, x, u)
            inside = (
                np.all(x >= box.x_lo, axis=1) & np.all(x <= box.x_hi, axis=1)
                & np.all(u >= box.u_lo, axis=1) & np.all(u <= box.u_hi, axis=1)
            )
            ok &= inside
            x = sys.f(x, u)
            finite = np.all(np.isfinite(x), axis=1)
            if not finite.all():
                ok &= finite
                x = np.where(finite[:, None], x, cost.x_s)  # park diverged rows
    else:
        for s in range(S):
            x = X0[s]
            for k in range(k_max):
                u = np.asarray(kappa(x), dtype=float)
                costs[s, k] = stage_cost(cost, x, u)
                if not box.contains(x, u):
                    ok[s] = False
                x = sys.f(x, u)
                if not np.all(np.isfinite(x)):
                    ok[s] = False
                    break
    return costs, ok


def _fit_decay(ratio_max: np.ndarray, plan: SamplingPlan):
    """Best decay pair on the rho grid for per-step worst ratios.

    For each grid ``rho`` the smallest feasible ``C`` is the worst ratio
    against ``rho^k`` (floored at 1); among fits with ``C <= C_max`` the pair
    minimizing ``C / (1 - rho)`` wins.  Returns ``(rho, C)`` or ``None``.
    """
    ks = np.arange(ratio_max.size)
    grid = plan.rho_grid()
    pw = grid[:, None] ** ks[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(pw > 0.0, ratio_max[None, :] / pw,
                           np.where(ratio_max[None, :] > 0.0, np.inf, 0.0))
    Cs = np.maximum(contrib.max(axis=1), 1.0)
    valid = Cs <= plan.C_max
    if not valid.any():
        return None
    score = np.where(valid, Cs / (1.0 - grid), np.inf)
    i = int(np.argmin(score))
    return float(grid[i]), float(Cs[i])


def estimate_controllability(sys: DiscreteSystem, cost: QuadraticStageCost,
                             kappa: Callable[[np.ndarray], np.ndarray],
                             plan: SamplingPlan) -> ControllabilityCertificate:
    """Estimate a decay certificate for ``kappa`` by sublevel-set sampling.

    Works down the level grid; for each level, samples start states, rolls
    the tail law out ``k_max`` steps, and requires every visited pair to stay
    in the constraint box.  A decay pair is fitted over the rho grid by
    taking the smallest compatible overshoot constant and keeping the pair
    with the smallest ``gamma_inf``; fits needing ``C > C_max`` are rejected.
    The first (largest) level that validates is returned, together with the
    measured gamma table and measured tail growth constants.

    Deterministic for a fixed plan: one generator seeded once, levels drawn
    in grid order, reductions over stably ordered samples.

    Raises
    ------
    CertificationError
        When no level validates; diagnostics list one entry per level.
    """
    rng = np.random.default_rng(plan.seed)
    failures = []
    for eps in plan.eps_grid:
        X0 = _draw_samples(cost, eps, plan, rng)
        lmin = np.asarray(stage_cost_min(cost, X0, sys.z_box), dtype=float)
        costs, ok = _rollout_costs(sys, cost, kappa, X0, plan.k_max)
        if not ok.all():
            bad = int(np.count_nonzero(~ok))
            failures.append((eps, f"{bad} of {ok.size} rollouts leave the box or diverge"))
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = costs / lmin[:, None]
        fit = _fit_decay(ratios.max(axis=0), plan)
        if fit is None:
            failures.append((eps, f"no decay fit with C <= {plan.C_max}"))
            continue
        rho_hat, C_hat = fit

        # measured counterparts on the accepted level's samples
        Vk = np.concatenate([np.zeros((X0.shape[0], 1)), np.cumsum(costs, axis=1)], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma_emp = np.max(Vk / lmin[:, None], axis=0)
        c_emp = np.full(plan.k_max, np.nan)
        for M in range(1, plan.k_max):
            qual = Vk[:, M] <= eps
            if qual.any():
                c_emp[M] = float(np.max(costs[qual, M] / Vk[qual, M]))

        return ControllabilityCertificate(
            rho=rho_hat,
            C=C_hat,
            eps=eps,
            gamma_table=gamma_table(rho_hat, C_hat, plan.k_max),
            gamma_inf=C_hat / (1.0 - rho_hat),
            gamma_table_empirical=gamma_emp,
            c_M_empirical_table=c_emp,
        )
    lines = "; ".join(f"eps={e:g}: {msg}" for e, msg in failures)
    raise CertificationError(f"no candidate level validates ({lines})", failures)


@dataclass(frozen=True)
class HorizonCertificate:
    """Horizon thresholds and margins for one ``(N, M)`` design point.

    Real-valued thresholds are reported next to the integer cutoffs actually
    compared against ``N`` (``N_M`` is the smallest prediction horizon the
    certificate admits).  ``gamma_source`` / ``c_M_source`` record whether
    each ingredient came from the analytic formulas or a measured override.
    """

    N: int
    M: int
    V_bar: float
    eps: float
    rho: float
    C: float
    gamma: float
    gamma_source: str
    c_M: float
    c_M_source: str
    gamma_Vbar: float
    gamma_lower: float
    rho_gamma: float
    N0: int
    N1: int
    N2_real: float
    N2: int
    N_M_real: float
    N_M: int
    M_lower: float
    alpha_M: float
    eps_NM: float
    alpha_NM: float
    certified: bool


def _power(base: float, exponent: int) -> float:
    if base == 0.0:
        if exponent > 0:
            return 0.0
        if exponent == 0:
            return 1.0
        return math.inf
    return base ** exponent


def horizon_certificate(cert: ControllabilityCertificate, N: int, M: int,
                        V_bar: float, gamma_override: Optional[float] = None,
                        c_M_override: Optional[float] = None) -> HorizonCertificate:
    """Assemble the full horizon certificate for a design point.

    By default every quantity derives from the certificate's ``(rho, C,
    eps)``.  Passing ``gamma_override`` (a measured bound on the gamma
    table) or ``c_M_override`` (a measured tail growth constant) substitutes
    the measured values throughout, which is how measured tables tighten the
    analytic thresholds.  ``certified`` records whether ``N`` clears the
    combined threshold with a positive descent margin.
    """
    if N < 1 or M < 1:
        raise ValueError("horizons must satisfy N >= 1 and M >= 1")
    if not V_bar > 0:
        raise ValueError("region level V_bar must be positive")
    rho, C, eps = cert.rho, cert.C, cert.eps

    gamma_analytic = C / (1.0 - rho)
    if gamma_override is not None:
        if not gamma_override >= 1.0:
            raise ValueError("gamma override must be at least 1")
        gamma, gamma_source = float(gamma_override), "override"
    else:
        gamma, gamma_source = gamma_analytic, "analytic"

    if c_M_override is not None:
        if not 0.0 <= c_M_override:
            raise ValueError("c_M override must be nonnegative")
        c_M, c_M_source = float(c_M_override), "override"
    else:
        c_M, c_M_source = c_M_analytic(rho, C, M), "analytic"

    gamma_Vbar = max(gamma, V_bar / eps)
    gamma_lower = min(gamma, V_bar / eps)
    N0 = int(math.ceil(max(0.0, (V_bar - gamma * eps) / eps)))
    rho_gamma = (gamma - 1.0) / gamma
    denom = math.log(gamma) - math.log(gamma - 1.0) if gamma > 1.0 else math.inf

    t_reach = max(math.log(gamma_lower), 0.0) / denom if denom != math.inf else 0.0
    N1 = N0 + int(math.ceil(t_reach))
    growth = c_M * gamma
    if growth > 0.0:
        N2_real = N0 + (math.log(growth) / denom if denom != math.inf else 0.0)
    else:
        N2_real = -math.inf
    N2 = 0 if N2_real == -math.inf else int(math.floor(N2_real)) + 1

    t_M = max(math.log(gamma_lower), 0.0)
    if growth > 0.0:
        t_M = max(t_M, math.log(growth))
    N_M_real = float(N0) if denom == math.inf else N0 + t_M / denom
    N_M = int(math.floor(N_M_real)) + 1

    pw = _power(rho_gamma, N - N0)
    eps_NM = 1.0 - growth * pw
    alpha_NM = eps_NM / (1.0 + gamma * pw)

    certified = (N > N_M_real) and (eps_NM > 0.0)

    return HorizonCertificate(
        N=N, M=M, V_bar=float(V_bar), eps=eps, rho=rho, C=C,
        gamma=gamma, gamma_source=gamma_source, c_M=c_M, c_M_source=c_M_source,
        gamma_Vbar=gamma_Vbar, gamma_lower=gamma_lower, rho_gamma=rho_gamma,
        N0=N0, N1=N1, N2_real=N2_real, N2=N2, N_M_real=N_M_real, N_M=N_M,
        M_lower=m_lower_threshold(rho, C), alpha_M=relaxed_clf_margin(rho, C, M),
        eps_NM=eps_NM, alpha_NM=alpha_NM, certified=certified,
    )
