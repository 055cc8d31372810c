"""Run configuration: TOML schema, validation, and object assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .certify import SamplingPlan
from .cost import QuadraticStageCost
from .model import (ConstraintBox, FourTankParams, ScalarPlantParams,
                    euler_discretize, scalar_discretize)
from .mpc import MPCConfig, SolverSettings
from .tail import lqr_tail_controller

__all__ = ["ConfigError", "RunConfig", "build_problem", "load_run_config"]

_DEFAULT_EPS_GRID = (2.56, 1.28, 0.64, 0.32, 0.16, 0.08, 0.04, 0.02, 0.01)


class ConfigError(ValueError):
    """Malformed or incomplete run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (see the shipped ``fourtank.toml``).

    ``plant`` is either the four-tank parameter set or the scalar test
    plant, selected by the ``kind`` key of the ``[plant]`` block.
    """

    plant: object
    box: ConstraintBox
    x_s: np.ndarray
    u_s: np.ndarray
    q_diag: np.ndarray
    r_diag: np.ndarray
    tail_gain: Optional[np.ndarray]
    mpc: MPCConfig
    sampling: SamplingPlan
    V_bar: Optional[float]
    x0: Optional[np.ndarray]
    T_sim: int
    sweep_pairs: tuple
    sweep_x0s: tuple
    sweep_workers: int
    out_dir: Optional[str]

    @property
    def n(self) -> int:
        return self.box.n

    @property
    def m(self) -> int:
        return self.box.m


def _check_keys(section: str, data: dict, allowed: set, required: set):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    missing = required - set(data)
    if missing:
        raise ConfigError(f"missing key(s) in [{section}]: {', '.join(sorted(missing))}")


def _vector(section: str, data: dict, key: str, size: int) -> np.ndarray:
    raw = data[key]
    if not isinstance(raw, (list, tuple)) or len(raw) != size:
        raise ConfigError(f"[{section}] {key} must be a list of {size} numbers")
    try:
        return np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} must be numeric: {exc}") from None


def _number(section: str, data: dict, key: str, default=None) -> float:
    if key not in data:
        return default
    raw = data[key]
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number")
    return float(raw)


def _integer(section: str, data: dict, key: str, default=None) -> int:
    if key not in data:
        return default
    raw = data[key]
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ConfigError(f"[{section}] {key} must be an integer")
    return raw


def load_run_config(path, seed_override: Optional[int] = None) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Unknown keys anywhere are rejected.  ``seed_override`` replaces the
    certification seed from the file (the ``--seed`` CLI flag).
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None

    _check_keys("top level", raw,
                {"plant", "cost", "tail", "mpc", "solver", "certify",
                 "simulate", "sweep", "output"},
                {"plant", "cost", "mpc"})

    plant_raw = raw["plant"]
    kind = plant_raw.get("kind", "fourtank")
    if kind == "fourtank":
        _check_keys("plant", plant_raw,
                    {"kind", "A", "a", "b", "g", "Ts", "x_s", "u_s",
                     "x_lo", "x_hi", "u_lo", "u_hi"},
                    {"A", "a", "b", "g", "Ts", "x_s", "u_s",
                     "x_lo", "x_hi", "u_lo", "u_hi"})
        n, m = 4, 2
        try:
            plant = FourTankParams(
                A=_vector("plant", plant_raw, "A", 4),
                a=_vector("plant", plant_raw, "a", 4),
                b=_vector("plant", plant_raw, "b", 2),
                g=_number("plant", plant_raw, "g"),
                Ts=_number("plant", plant_raw, "Ts"),
            )
        except ValueError as exc:
            raise ConfigError(f"[plant] invalid: {exc}") from None
    elif kind == "scalar":
        _check_keys("plant", plant_raw,
                    {"kind", "a", "b", "Ts", "x_s", "u_s",
                     "x_lo", "x_hi", "u_lo", "u_hi"},
                    {"a", "b", "x_s", "u_s", "x_lo", "x_hi", "u_lo", "u_hi"})
        n, m = 1, 1
        try:
            plant = ScalarPlantParams(
                a=_number("plant", plant_raw, "a"),
                b=_number("plant", plant_raw, "b"),
                Ts=_number("plant", plant_raw, "Ts", 1.0),
            )
        except ValueError as exc:
            raise ConfigError(f"[plant] invalid: {exc}") from None
    else:
        raise ConfigError(f"[plant] kind must be 'fourtank' or 'scalar', got {kind!r}")
    try:
        box = ConstraintBox(
            x_lo=_vector("plant", plant_raw, "x_lo", n),
            x_hi=_vector("plant", plant_raw, "x_hi", n),
            u_lo=_vector("plant", plant_raw, "u_lo", m),
            u_hi=_vector("plant", plant_raw, "u_hi", m),
        )
    except ValueError as exc:
        raise ConfigError(f"[plant] invalid: {exc}") from None
    x_s = _vector("plant", plant_raw, "x_s", n)
    u_s = _vector("plant", plant_raw, "u_s", m)

    cost_raw = raw["cost"]
    _check_keys("cost", cost_raw, {"q_diag", "r_diag"}, {"q_diag", "r_diag"})
    q_diag = _vector("cost", cost_raw, "q_diag", n)
    r_diag = _vector("cost", cost_raw, "r_diag", m)

    tail_gain = None
    if "tail" in raw:
        _check_keys("tail", raw["tail"], {"K"}, set())
        if "K" in raw["tail"]:
            rows = raw["tail"]["K"]
            if not (isinstance(rows, list) and len(rows) == m
                    and all(isinstance(r, list) and len(r) == n for r in rows)):
                raise ConfigError(f"[tail] K must be a {m}x{n} nested list")
            tail_gain = np.asarray(rows, dtype=float)

    mpc_raw = raw["mpc"]
    _check_keys("mpc", mpc_raw, {"N", "M"}, {"N", "M"})
    solver_raw = raw.get("solver", {})
    _check_keys("solver", solver_raw,
                {"max_iterations", "kkt_tolerance", "constraint_tolerance",
                 "penalty_init", "penalty_growth", "warm_start"}, set())
    defaults = SolverSettings()
    warm = solver_raw.get("warm_start", defaults.warm_start)
    if not isinstance(warm, bool):
        raise ConfigError("[solver] warm_start must be a boolean")
    try:
        settings = SolverSettings(
            max_iterations=_integer("solver", solver_raw, "max_iterations",
                                    defaults.max_iterations),
            kkt_tolerance=_number("solver", solver_raw, "kkt_tolerance",
                                  defaults.kkt_tolerance),
            constraint_tolerance=_number("solver", solver_raw, "constraint_tolerance",
                                         defaults.constraint_tolerance),
            penalty_init=_number("solver", solver_raw, "penalty_init",
                                 defaults.penalty_init),
            penalty_growth=_number("solver", solver_raw, "penalty_growth",
                                   defaults.penalty_growth),
            warm_start=warm,
        )
        mpc = MPCConfig(N=_integer("mpc", mpc_raw, "N"),
                        M=_integer("mpc", mpc_raw, "M"), solver=settings)
    except ValueError as exc:
        raise ConfigError(f"solver/horizon settings invalid: {exc}") from None

    cert_raw = raw.get("certify", {})
    _check_keys("certify", cert_raw,
                {"eps_grid", "n_boundary", "n_interior", "k_max", "seed",
                 "rho_step", "rho_max", "C_max", "V_bar"}, set())
    grid = cert_raw.get("eps_grid", list(_DEFAULT_EPS_GRID))
    if not isinstance(grid, (list, tuple)):
        raise ConfigError("[certify] eps_grid must be a list of levels")
    plan_defaults = SamplingPlan(eps_grid=(1.0,))
    seed = _integer("certify", cert_raw, "seed", plan_defaults.seed)
    if seed_override is not None:
        seed = int(seed_override)
    try:
        sampling = SamplingPlan(
            eps_grid=tuple(grid),
            n_boundary=_integer("certify", cert_raw, "n_boundary",
                                plan_defaults.n_boundary),
            n_interior=_integer("certify", cert_raw, "n_interior",
                                plan_defaults.n_interior),
            k_max=_integer("certify", cert_raw, "k_max", plan_defaults.k_max),
            seed=seed,
            rho_step=_number("certify", cert_raw, "rho_step", plan_defaults.rho_step),
            rho_max=_number("certify", cert_raw, "rho_max", plan_defaults.rho_max),
            C_max=_number("certify", cert_raw, "C_max", plan_defaults.C_max),
        )
    except ValueError as exc:
        raise ConfigError(f"[certify] invalid: {exc}") from None
    V_bar = _number("certify", cert_raw, "V_bar")

    sim_raw = raw.get("simulate", {})
    _check_keys("simulate", sim_raw, {"x0", "T_sim"}, set())
    x0 = _vector("simulate", sim_raw, "x0", n) if "x0" in sim_raw else None
    T_sim = _integer("simulate", sim_raw, "T_sim", 400)
    if T_sim < 1:
        raise ConfigError("[simulate] T_sim must be at least 1")

    sweep_raw = raw.get("sweep", {})
    _check_keys("sweep", sweep_raw, {"pairs", "x0s", "workers"}, set())
    pairs = []
    for entry in sweep_raw.get("pairs", []):
        if not (isinstance(entry, list) and len(entry) == 2
                and all(isinstance(v, int) and not isinstance(v, bool) and v >= 1
                        for v in entry)):
            raise ConfigError("[sweep] pairs must be two-element lists of horizons")
        pairs.append((entry[0], entry[1]))
    x0s = []
    for entry in sweep_raw.get("x0s", []):
        x0s.append(_vector("sweep", {"x0s": entry}, "x0s", n))
    workers = _integer("sweep", sweep_raw, "workers", 1)
    if workers < 1:
        raise ConfigError("[sweep] workers must be at least 1")

    out_raw = raw.get("output", {})
    _check_keys("output", out_raw, {"dir"}, set())
    out_dir = out_raw.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("[output] dir must be a string path")

    try:
        return RunConfig(
            plant=plant, box=box, x_s=x_s, u_s=u_s,
            q_diag=q_diag, r_diag=r_diag, tail_gain=tail_gain,
            mpc=mpc, sampling=sampling, V_bar=V_bar,
            x0=x0, T_sim=T_sim,
            sweep_pairs=tuple(pairs), sweep_x0s=tuple(x0s),
            sweep_workers=workers, out_dir=out_dir,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_problem(cfg: RunConfig):
    """Assemble ``(system, cost, tail law)`` from a run configuration.

    The declared equilibrium is validated as a fixed point of the
    discretized plant; the tail gain comes from Riccati synthesis at the
    setpoint unless the configuration pins one.
    """
    try:
        if isinstance(cfg.plant, FourTankParams):
            sys = euler_discretize(cfg.plant, cfg.box, x_s=cfg.x_s, u_s=cfg.u_s)
        else:
            sys = scalar_discretize(cfg.plant, cfg.box, x_s=cfg.x_s, u_s=cfg.u_s)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        cost = QuadraticStageCost(x_s=cfg.x_s, u_s=cfg.u_s,
                                  q_diag=cfg.q_diag, r_diag=cfg.r_diag)
        kappa = lqr_tail_controller(sys, cost, K=cfg.tail_gain)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return sys, cost, kappa
