"""Shared fixtures and the acceptance-criteria summary hook.

Expensive artifacts (the shipped four-tank problem, its decay certificate,
and the two reference closed-loop runs) are built once per session and
shared across test modules.  Acceptance tests register one line per
criterion via :func:`record_acceptance`; the lines are printed in the
terminal summary so every criterion's outcome is visible at a glance.
"""

from __future__ import annotations

import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

import tailmpc
from tailmpc import (MPCConfig, build_problem, estimate_controllability,
                     horizon_certificate, load_run_config, run_closed_loop,
                     verify_guarantees)

DATA_DIR = Path(tailmpc.__file__).parent / "data"
FOURTANK_TOML = DATA_DIR / "fourtank.toml"
SCALAR_TOML = DATA_DIR / "scalar.toml"

ACCEPTANCE_RESULTS: list = []


def record_acceptance(tag: str, passed: bool, detail: str) -> None:
    """Register one acceptance-criterion outcome for the terminal summary."""
    ACCEPTANCE_RESULTS.append((tag, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for tag, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {tag}  ({detail})")


# --------------------------------------------------------------------------
# shipped four-tank problem
# --------------------------------------------------------------------------


@pytest.fixture(scope="session")
def ft_cfg():
    return load_run_config(FOURTANK_TOML)


@pytest.fixture(scope="session")
def ft_problem(ft_cfg):
    return build_problem(ft_cfg)


@pytest.fixture(scope="session")
def ft_cert(ft_cfg, ft_problem):
    sys_, cost, kappa = ft_problem
    return estimate_controllability(sys_, cost, kappa, ft_cfg.sampling)


def horizon_pair(cfg_V_bar, cert, N, M):
    """Analytic-path and measured-path horizon certificates, like the CLI."""
    analytic = horizon_certificate(cert, N, M, cfg_V_bar)
    gamma_emp = None
    if cert.gamma_table_empirical is not None:
        gamma_emp = max(1.0, float(np.max(cert.gamma_table_empirical)))
    c_emp = cert.c_M_measured(M)
    if gamma_emp is None and c_emp is None:
        return analytic, None
    empirical = horizon_certificate(cert, N, M, cfg_V_bar,
                                    gamma_override=gamma_emp,
                                    c_M_override=c_emp)
    return analytic, empirical


def pick_margin(analytic, empirical):
    if empirical is not None and empirical.eps_NM > 0:
        return empirical
    return analytic


@pytest.fixture(scope="session")
def ft_horizons(ft_cfg, ft_cert):
    return horizon_pair(ft_cfg.V_bar, ft_cert, ft_cfg.mpc.N, ft_cfg.mpc.M)


def _closed_loop_bundle(ft_cfg, ft_problem, ft_cert, N, M, x0, T_sim):
    sys_, cost, kappa = ft_problem
    analytic, empirical = horizon_pair(ft_cfg.V_bar, ft_cert, N, M)
    margin = pick_margin(analytic, empirical)
    config = MPCConfig(N=N, M=M, solver=ft_cfg.mpc.solver)
    start = time.perf_counter()
    trace = run_closed_loop(sys_, cost, kappa, config, x0, T_sim,
                            eps_NM=margin.eps_NM,
                            sample_time=ft_cfg.plant.Ts)
    wall = time.perf_counter() - start
    report = verify_guarantees(trace, margin)
    return SimpleNamespace(trace=trace, report=report, margin=margin,
                           analytic=analytic, empirical=empirical, wall=wall)


@pytest.fixture(scope="session")
def ft_run(ft_cfg, ft_problem, ft_cert):
    """Closed loop at the shipped defaults (N=5, M=25, far start)."""
    return _closed_loop_bundle(ft_cfg, ft_problem, ft_cert,
                               ft_cfg.mpc.N, ft_cfg.mpc.M,
                               ft_cfg.x0, ft_cfg.T_sim)


@pytest.fixture(scope="session")
def near_run(ft_cfg, ft_problem, ft_cert):
    """Closed loop at the short pair (N=1, M=8) from near the setpoint."""
    x0 = np.asarray(ft_cfg.sweep_x0s[1], dtype=float)
    return _closed_loop_bundle(ft_cfg, ft_problem, ft_cert, 1, 8, x0, 400)


# --------------------------------------------------------------------------
# scalar test plant
# --------------------------------------------------------------------------


@pytest.fixture(scope="session")
def scalar_cfg():
    return load_run_config(SCALAR_TOML)


@pytest.fixture(scope="session")
def scalar_problem(scalar_cfg):
    return build_problem(scalar_cfg)
