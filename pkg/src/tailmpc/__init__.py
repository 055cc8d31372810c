"""Nonlinear MPC with finite-tail costs and closed-loop certification.

The package builds model-predictive controllers whose terminal ingredient is
a finite rollout of a known stabilizing control law instead of a terminal
set or an infinite-horizon value function.  It ships:

- plant modelling helpers and a four-tank benchmark (`model`),
- quadratic stage costs (`cost`),
- tail-law synthesis and finite-tail-cost evaluation (`tail`),
- decay-constant estimation and horizon certification (`certify`),
- the constrained MPC solver (`mpc`),
- closed-loop simulation and guarantee verification (`simulate`),
- TOML run configs (`config`) and a CLI (`cli`).
"""

from __future__ import annotations

from .certify import (CertificationError, ControllabilityCertificate,
                      HorizonCertificate, SamplingPlan, c_M_analytic, c_M_lp,
                      estimate_controllability, gamma_k, gamma_table,
                      horizon_certificate, m_lower_threshold,
                      no_terminal_horizon_bound, relaxed_clf_margin)
from .config import ConfigError, RunConfig, build_problem, load_run_config
from .cost import QuadraticStageCost, stage_cost, stage_cost_min
from .model import (ConstraintBox, DiscreteSystem, FourTankParams,
                    LinearizationError, ScalarPlantParams, euler_discretize,
                    four_tank_vector_field, linearize, scalar_discretize)
from .mpc import (MPCConfig, MPCSolution, SolverSettings, objective, predict,
                  shift_warm_start, solve)
from .simulate import (ClosedLoopTrace, GuaranteeReport, SimulationFailure,
                       run_closed_loop, verify_guarantees, write_plot_csv,
                       write_trace_csv)
from .tail import (RolloutError, SynthesisError, TailController,
                   TailEvaluation, dare_solve, finite_tail_cost,
                   lqr_tail_controller, rollout)

__version__ = "0.1.0"

__all__ = [
    "CertificationError",
    "ClosedLoopTrace",
    "ConfigError",
    "ConstraintBox",
    "ControllabilityCertificate",
    "DiscreteSystem",
    "FourTankParams",
    "GuaranteeReport",
    "HorizonCertificate",
    "LinearizationError",
    "MPCConfig",
    "MPCSolution",
    "QuadraticStageCost",
    "RolloutError",
    "RunConfig",
    "SamplingPlan",
    "ScalarPlantParams",
    "SimulationFailure",
    "SolverSettings",
    "SynthesisError",
    "TailController",
    "TailEvaluation",
    "build_problem",
    "c_M_analytic",
    "c_M_lp",
    "dare_solve",
    "estimate_controllability",
    "euler_discretize",
    "finite_tail_cost",
    "four_tank_vector_field",
    "gamma_k",
    "gamma_table",
    "horizon_certificate",
    "linearize",
    "load_run_config",
    "lqr_tail_controller",
    "m_lower_threshold",
    "no_terminal_horizon_bound",
    "objective",
    "predict",
    "relaxed_clf_margin",
    "rollout",
    "run_closed_loop",
    "scalar_discretize",
    "shift_warm_start",
    "solve",
    "stage_cost",
    "stage_cost_min",
    "verify_guarantees",
    "write_plot_csv",
    "write_trace_csv",
    "__version__",
]
