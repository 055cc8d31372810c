"""Closed-loop simulation and verification of the certified guarantees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .certify import HorizonCertificate
from .cost import QuadraticStageCost, stage_cost, stage_cost_min
from .model import DiscreteSystem
from .mpc import MPCConfig, shift_warm_start, solve
from .tail import TailController

__all__ = [
    "ClosedLoopTrace",
    "GuaranteeReport",
    "SimulationFailure",
    "run_closed_loop",
    "verify_guarantees",
    "write_plot_csv",
    "write_trace_csv",
]


class SimulationFailure(RuntimeError):
    """Solver failure inside the loop; carries the partial trace."""

    def __init__(self, message: str, trace: "ClosedLoopTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class ClosedLoopTrace:
    """Closed-loop record over ``T`` steps.

    ``states`` has ``T + 1`` rows; all per-step arrays have ``T`` entries.
    ``decrease_margins[t]`` is ``V(t+1) - V(t) + eps_NM * l(t)`` (certified
    descent requires it to be nonpositive); the last entry is NaN since it
    needs the value one step past the horizon of the record.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    values: np.ndarray
    lmin_values: np.ndarray
    decrease_margins: np.ndarray
    statuses: list
    iterations: np.ndarray
    eps_NM: float
    kkt_tolerance: float

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


def run_closed_loop(sys: DiscreteSystem, cost: QuadraticStageCost,
                    kappa: TailController, config: MPCConfig,
                    x0: np.ndarray, T_sim: int,
                    eps_NM: float = 0.0, sample_time: float = 1.0) -> ClosedLoopTrace:
    """Run the MPC loop for ``T_sim`` steps from ``x0``.

    Each step solves the finite-tail problem, applies the first input to the
    plant, and (when the solver settings say so) warm starts the next solve
    with the shifted solution extended by the tail law.  ``eps_NM`` only
    parameterizes the recorded decrease margins; ``sample_time`` only scales
    the recorded times.

    Raises
    ------
    SimulationFailure
        When a solve reports ``"infeasible"``; the partial trace rides along
        on the exception.
    """
    if T_sim < 1:
        raise ValueError("T_sim must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    states = np.empty((T_sim + 1, sys.n))
    inputs = np.empty((T_sim, sys.m))
    stage_costs = np.empty(T_sim)
    values = np.empty(T_sim)
    iters = np.zeros(T_sim, dtype=int)
    statuses: list = []

    states[0] = x0
    warm = None
    for t in range(T_sim):
        sol = solve(sys, cost, kappa, config, states[t], warm=warm)
        statuses.append(sol.status)
        iters[t] = sol.iterations
        if sol.status == "infeasible":
            partial = _assemble_trace(sys, cost, states[:t + 1], inputs[:t],
                                      stage_costs[:t], values[:t], iters[:t],
                                      statuses, eps_NM, config, sample_time)
            raise SimulationFailure(
                f"solver reported infeasible at step {t} "
                f"(worst violation {sol.max_violation:.3e})", partial)
        inputs[t] = sol.u_seq[0]
        values[t] = sol.value
        stage_costs[t] = stage_cost(cost, states[t], inputs[t])
        states[t + 1] = sys.f(states[t], inputs[t])
        warm = shift_warm_start(sol, kappa) if config.solver.warm_start else None
    return _assemble_trace(sys, cost, states, inputs, stage_costs, values,
                           iters, statuses, eps_NM, config, sample_time)


def _assemble_trace(sys, cost, states, inputs, stage_costs, values, iters,
                    statuses, eps_NM, config, sample_time) -> ClosedLoopTrace:
    T = inputs.shape[0]
    lmin = np.asarray(stage_cost_min(cost, states, sys.z_box), dtype=float).reshape(-1)
    margins = np.full(T, np.nan)
    if T > 1:
        margins[:T - 1] = values[1:] - values[:-1] + eps_NM * stage_costs[:-1]
    return ClosedLoopTrace(
        times=np.arange(states.shape[0], dtype=float) * sample_time,
        states=np.asarray(states, dtype=float),
        inputs=np.asarray(inputs, dtype=float),
        stage_costs=np.asarray(stage_costs, dtype=float),
        values=np.asarray(values, dtype=float),
        lmin_values=lmin,
        decrease_margins=margins,
        statuses=list(statuses),
        iterations=np.asarray(iters, dtype=int),
        eps_NM=float(eps_NM),
        kkt_tolerance=config.solver.kkt_tolerance,
    )


@dataclass
class GuaranteeReport:
    """Outcome of the closed-loop guarantee checks.

    Slack for the per-step checks is ``10 * kkt_tolerance * max(1, |V(t)|)``,
    covering solver tolerance in the recorded values.
    """

    descent_ok: bool
    worst_descent_margin: float
    performance_ok: bool
    performance_sum: float
    performance_bound: float
    sandwich_ok: bool
    worst_sandwich_ratio: float
    monotone_ok: bool
    worst_increase: float
    monotone_gated: bool
    converged: bool
    final_lmin_ratio: float
    all_passed: bool = field(init=False)

    def __post_init__(self):
        self.all_passed = (self.descent_ok and self.performance_ok
                           and self.sandwich_ok
                           and (self.monotone_ok or not self.monotone_gated))


def verify_guarantees(trace: ClosedLoopTrace, cert: HorizonCertificate,
                      convergence_ratio: float = 1e-6) -> GuaranteeReport:
    """Check the certified inequalities on a recorded trace.

    Four checks: per-step descent by ``eps_NM`` times the stage cost;
    closed-loop cost sum bounded by the initial value over ``eps_NM``;
    the value sandwiched between the minimal stage cost and ``gamma_Vbar``
    times it; and monotone non-increase of the value.  ``converged``
    additionally reports whether the final minimal stage cost dropped below
    ``convergence_ratio`` times the initial one (not part of ``all_passed``).

    Monotone non-increase of the value is only promised by the theory when
    the horizon pair is actually certified (positive guaranteed descent
    fraction); with an uncertified pair the value may legitimately grow by
    up to the tail-extension factor per step, so the check is still
    reported but does not gate ``all_passed``.
    """
    V = trace.values
    ell = trace.stage_costs
    lmin = trace.lmin_values
    T = trace.T
    eps = cert.eps_NM
    slack = 10.0 * trace.kkt_tolerance * np.maximum(1.0, np.abs(V))

    descent = V[1:] - V[:-1] + eps * ell[:-1] if T > 1 else np.zeros(0)
    descent_ok = bool(np.all(descent <= slack[:-1])) if T > 1 else True
    worst_descent = float(np.max(descent)) if T > 1 else 0.0

    perf_sum = float(np.sum(ell))
    perf_bound = float(V[0] / eps) if eps > 0 else math.inf
    performance_ok = perf_sum <= perf_bound * (1.0 + 1e-12) + 10.0 * trace.kkt_tolerance

    upper = cert.gamma_Vbar * lmin[:T] + slack
    lower = lmin[:T] - slack
    sandwich_ok = bool(np.all(V <= upper) and np.all(V >= lower))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(lmin[:T] > 0, V / np.maximum(lmin[:T], 1e-300), 1.0)
    worst_ratio = float(np.max(ratios))

    increases = V[1:] - V[:-1] if T > 1 else np.zeros(0)
    monotone_ok = bool(np.all(increases <= slack[:-1])) if T > 1 else True
    worst_increase = float(np.max(increases)) if T > 1 else 0.0

    final_ratio = float(lmin[T] / lmin[0]) if lmin[0] > 0 else 0.0
    converged = final_ratio < convergence_ratio

    return GuaranteeReport(
        descent_ok=descent_ok, worst_descent_margin=worst_descent,
        performance_ok=performance_ok, performance_sum=perf_sum,
        performance_bound=perf_bound,
        sandwich_ok=sandwich_ok, worst_sandwich_ratio=worst_ratio,
        monotone_ok=monotone_ok, worst_increase=worst_increase,
        monotone_gated=bool(cert.certified),
        converged=converged, final_lmin_ratio=final_ratio,
    )


def write_plot_csv(trace: ClosedLoopTrace, sys: DiscreteSystem, path):
    """Write levels/inflows-vs-time data with their bounds for plotting.

    One row per step: the time in plant time units, every state with its box
    bounds, every input with its box bounds.  Infinite bounds are written as
    ``inf``/``-inf``.
    """
    n = trace.states.shape[1]
    m = trace.inputs.shape[1]
    box = sys.z_box
    cols = ["time"]
    for i in range(n):
        cols += [f"x_{i + 1}", f"x_{i + 1}_lo", f"x_{i + 1}_hi"]
    for j in range(m):
        cols += [f"u_{j + 1}", f"u_{j + 1}_lo", f"u_{j + 1}_hi"]
    lines = [",".join(cols)]
    for t in range(trace.T):
        row = [repr(float(trace.times[t]))]
        for i in range(n):
            row += [repr(float(trace.states[t, i])),
                    repr(float(box.x_lo[i])), repr(float(box.x_hi[i]))]
        for j in range(m):
            row += [repr(float(trace.inputs[t, j])),
                    repr(float(box.u_lo[j])), repr(float(box.u_hi[j]))]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(trace: ClosedLoopTrace, path):
    """Write the trace as CSV, one row per closed-loop step.

    All columns are measured closed-loop quantities except
    ``decrease_margin``, which folds in the certificate margin the trace was
    recorded with.
    """
    n = trace.states.shape[1]
    m = trace.inputs.shape[1]
    cols = (["t"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"u_{j + 1}" for j in range(m)]
            + ["stage_cost", "value", "decrease_margin", "solver_status", "solver_iters"])
    lines = [",".join(cols)]
    for t in range(trace.T):
        row = [repr(float(trace.times[t]))]
        row += [repr(float(v)) for v in trace.states[t]]
        row += [repr(float(v)) for v in trace.inputs[t]]
        row += [repr(float(trace.stage_costs[t])), repr(float(trace.values[t])),
                repr(float(trace.decrease_margins[t])),
                trace.statuses[t], str(int(trace.iterations[t]))]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
