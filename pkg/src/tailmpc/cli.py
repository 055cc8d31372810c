"""Command-line interface: certify, simulate, compare, sweep.

Exit codes: 0 when the requested certification/verification holds, 1 when it
is violated, 2 on usage or configuration errors, 3 on solver failures.
Outputs are deterministic for a fixed config and seed; every number in a
report carries a provenance label ([analytic] closed form vs [empirical]
measured estimate).
"""

from __future__ import annotations

import argparse
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .certify import (CertificationError, ControllabilityCertificate,
                      HorizonCertificate, estimate_controllability,
                      horizon_certificate, m_lower_threshold,
                      no_terminal_horizon_bound)
from .config import ConfigError, RunConfig, build_problem, load_run_config
from .simulate import (SimulationFailure, run_closed_loop, verify_guarantees,
                       write_plot_csv, write_trace_csv)

__all__ = ["main"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _line(key: str, value, label: str) -> str:
    return f"{key} = {_fmt(value)}  [{label}]"


def _certificate_lines(cert: ControllabilityCertificate) -> list:
    lines = ["[decay certificate]"]
    lines.append(_line("rho", cert.rho, "empirical"))
    lines.append(_line("C", cert.C, "empirical"))
    lines.append(_line("eps", cert.eps, "empirical"))
    lines.append(_line("gamma_inf", cert.gamma_inf, "analytic"))
    lines.append(_line("gamma_table_max", float(cert.gamma_table[-1]), "analytic"))
    if cert.gamma_table_empirical is not None:
        lines.append(_line("gamma_table_empirical_max",
                           float(np.max(cert.gamma_table_empirical)), "empirical"))
    lines.append(_line("k_max", cert.k_max, "empirical"))
    return lines


def _horizon_lines(tag: str, hc: HorizonCertificate) -> list:
    lines = [f"[horizon point N={hc.N} M={hc.M}, {tag} path]"]
    src_g, src_c = hc.gamma_source, hc.c_M_source
    src_g = "empirical" if src_g == "override" else "analytic"
    src_c = "empirical" if src_c == "override" else "analytic"
    lines.append(_line("gamma", hc.gamma, src_g))
    lines.append(_line("c_M", hc.c_M, src_c))
    lines.append(_line("V_bar", hc.V_bar, "config"))
    lines.append(_line("gamma_Vbar", hc.gamma_Vbar, src_g))
    lines.append(_line("gamma_lower", hc.gamma_lower, src_g))
    lines.append(_line("rho_gamma", hc.rho_gamma, src_g))
    lines.append(_line("N0", hc.N0, src_g))
    lines.append(_line("N1", hc.N1, src_g))
    lines.append(_line("N2_real", hc.N2_real, src_c))
    lines.append(_line("N2", hc.N2, src_c))
    lines.append(_line("N_M_real", hc.N_M_real, src_c))
    lines.append(_line("N_M", hc.N_M, src_c))
    lines.append(_line("M_lower", hc.M_lower, "analytic"))
    lines.append(_line("alpha_M", hc.alpha_M, "analytic"))
    lines.append(_line("eps_NM", hc.eps_NM, src_c))
    lines.append(_line("alpha_NM", hc.alpha_NM, src_c))
    lines.append(f"certified = {'yes' if hc.certified else 'no'}")
    return lines


def _horizon_pair(cfg: RunConfig, cert: ControllabilityCertificate):
    """Analytic-path and measured-path horizon certificates for the config."""
    N, M = cfg.mpc.N, cfg.mpc.M
    analytic = horizon_certificate(cert, N, M, cfg.V_bar)
    gamma_emp = None
    if cert.gamma_table_empirical is not None:
        gamma_emp = float(np.max(cert.gamma_table_empirical))
        if gamma_emp < 1.0:
            gamma_emp = 1.0
    c_emp = cert.c_M_measured(M)
    if gamma_emp is None and c_emp is None:
        return analytic, None
    empirical = horizon_certificate(cert, N, M, cfg.V_bar,
                                    gamma_override=gamma_emp, c_M_override=c_emp)
    return analytic, empirical


def _require_vbar(cfg: RunConfig):
    if cfg.V_bar is None:
        raise ConfigError("[certify] V_bar is required for this command")


def _write(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


def _gamma_csv(cert: ControllabilityCertificate, path: Path) -> None:
    header = "k,gamma_k_analytic,gamma_k_empirical"
    rows = [header]
    emp = cert.gamma_table_empirical
    for k in range(cert.k_max + 1):
        emp_val = repr(float(emp[k])) if emp is not None else ""
        rows.append(f"{k},{repr(float(cert.gamma_table[k]))},{emp_val}")
    _write(path, rows)


def _cmd_certify(cfg: RunConfig, out_dir: Path) -> int:
    _require_vbar(cfg)
    sys_, cost, kappa = build_problem(cfg)
    cert = estimate_controllability(sys_, cost, kappa, cfg.sampling)
    analytic, empirical = _horizon_pair(cfg, cert)
    lines = _certificate_lines(cert)
    lines.append("")
    lines.extend(_horizon_lines("analytic", analytic))
    if empirical is not None:
        lines.append("")
        lines.extend(_horizon_lines("empirical", empirical))
    _write(out_dir / "certificate.txt", lines)
    _gamma_csv(cert, out_dir / "gamma_table.csv")
    print("\n".join(lines))
    certified = analytic.certified or (empirical is not None and empirical.certified)
    return 0 if certified else 1


def _cmd_compare(cfg: RunConfig, out_dir: Path) -> int:
    _require_vbar(cfg)
    sys_, cost, kappa = build_problem(cfg)
    cert = estimate_controllability(sys_, cost, kappa, cfg.sampling)
    analytic, empirical = _horizon_pair(cfg, cert)
    lines = _certificate_lines(cert)
    lines.append("")
    lines.extend(_horizon_lines("analytic", analytic))
    if empirical is not None:
        lines.append("")
        lines.extend(_horizon_lines("empirical", empirical))
    lines.append("")
    lines.append("[no-terminal-cost comparison]")
    lines.append(_line("M_lower", m_lower_threshold(cert.rho, cert.C), "analytic"))
    lines.append(_line("horizon_bound(gamma_analytic)",
                       no_terminal_horizon_bound(analytic.gamma), "analytic"))
    if empirical is not None:
        lines.append(_line("horizon_bound(gamma_empirical)",
                           no_terminal_horizon_bound(empirical.gamma), "empirical"))
    lines.append("note: single-step constant-gamma bound; published multi-step")
    lines.append("weighted analyses tighten such bounds substantially (docs).")
    lines.append("")
    lines.append("[finite-tail threshold sweep over M at the configured N]")
    lines.append("M,N_M_analytic,eps_NM_analytic,decay_product_analytic,"
                 "N_M_empirical,eps_NM_empirical")
    N = cfg.mpc.N
    gamma_emp = None
    if cert.gamma_table_empirical is not None:
        gamma_emp = max(1.0, float(np.max(cert.gamma_table_empirical)))
    for M in range(1, cert.k_max):
        hca = horizon_certificate(cert, N, M, cfg.V_bar)
        # per-step growth product rho^M * rho_gamma^N / (1 - rho^M)
        prod = (cert.rho ** M) * hca.rho_gamma ** N / (1.0 - cert.rho ** M)
        c_emp = cert.c_M_measured(M)
        if gamma_emp is not None or c_emp is not None:
            hce = horizon_certificate(cert, N, M, cfg.V_bar,
                                      gamma_override=gamma_emp, c_M_override=c_emp)
            emp_nm, emp_eps = repr(hce.N_M_real), repr(hce.eps_NM)
        else:
            emp_nm, emp_eps = "", ""
        lines.append(",".join([str(M), repr(hca.N_M_real), repr(hca.eps_NM),
                               repr(prod), emp_nm, emp_eps]))
    _write(out_dir / "compare.txt", lines)
    print("\n".join(lines))
    certified = analytic.certified or (empirical is not None and empirical.certified)
    return 0 if certified else 1


def _pick_margin_cert(analytic: HorizonCertificate, empirical):
    if empirical is not None and empirical.eps_NM > 0:
        return empirical, "empirical"
    return analytic, "analytic"


def _cmd_simulate(cfg: RunConfig, out_dir: Path) -> int:
    _require_vbar(cfg)
    if cfg.x0 is None:
        raise ConfigError("[simulate] x0 is required for this command")
    sys_, cost, kappa = build_problem(cfg)
    cert = estimate_controllability(sys_, cost, kappa, cfg.sampling)
    analytic, empirical = _horizon_pair(cfg, cert)
    margin_cert, margin_src = _pick_margin_cert(analytic, empirical)
    trace = run_closed_loop(sys_, cost, kappa, cfg.mpc, cfg.x0, cfg.T_sim,
                            eps_NM=max(margin_cert.eps_NM, 0.0),
                            sample_time=cfg.plant.Ts)
    report = verify_guarantees(trace, margin_cert)
    write_trace_csv(trace, out_dir / "trace.csv")
    write_plot_csv(trace, sys_, out_dir / "plot_data.csv")

    lines = _certificate_lines(cert)
    lines.append("")
    lines.extend(_horizon_lines("analytic", analytic))
    if empirical is not None:
        lines.append("")
        lines.extend(_horizon_lines("empirical", empirical))
    lines.append("")
    lines.append("[guarantee verification]")
    lines.append(_line("margin_path", margin_src, margin_src))
    lines.append(_line("eps_NM", margin_cert.eps_NM, margin_src))
    lines.append(_line("descent_ok", report.descent_ok, "empirical"))
    lines.append(_line("worst_descent_margin", report.worst_descent_margin, "empirical"))
    lines.append(_line("performance_sum", report.performance_sum, "empirical"))
    lines.append(_line("performance_bound", report.performance_bound, margin_src))
    lines.append(_line("performance_ok", report.performance_ok, "empirical"))
    lines.append(_line("sandwich_ok", report.sandwich_ok, "empirical"))
    lines.append(_line("worst_sandwich_ratio", report.worst_sandwich_ratio, "empirical"))
    monotone_label = "empirical" if report.monotone_gated else "informational"
    lines.append(_line("monotone_ok", report.monotone_ok, monotone_label))
    lines.append(_line("worst_increase", report.worst_increase, monotone_label))
    lines.append(_line("converged", report.converged, "empirical"))
    lines.append(_line("final_lmin_ratio", report.final_lmin_ratio, "empirical"))
    lines.append(f"overall = {'PASS' if report.all_passed else 'FAIL'}")
    _write(out_dir / "verification.txt", lines)
    print("\n".join(lines))
    return 0 if report.all_passed else 1


def _sweep_cell(cfg: RunConfig, cert, pair, x0_index, x0, out_dir: Path):
    from dataclasses import replace

    N, M = pair
    mpc = replace(cfg.mpc, N=N, M=M)
    analytic = horizon_certificate(cert, N, M, cfg.V_bar)
    gamma_emp = None
    if cert.gamma_table_empirical is not None:
        gamma_emp = max(1.0, float(np.max(cert.gamma_table_empirical)))
    c_emp = cert.c_M_measured(M)
    empirical = None
    if gamma_emp is not None or c_emp is not None:
        empirical = horizon_certificate(cert, N, M, cfg.V_bar,
                                        gamma_override=gamma_emp, c_M_override=c_emp)
    margin_cert, margin_src = _pick_margin_cert(analytic, empirical)
    emp_eps = repr(empirical.eps_NM) if empirical is not None else ""
    emp_cert = ("yes" if empirical.certified else "no") if empirical is not None else ""
    prefix = [
        str(N), str(M), str(x0_index),
        repr(analytic.eps_NM), "yes" if analytic.certified else "no",
        emp_eps, emp_cert, margin_src,
    ]

    sys_, cost, kappa = build_problem(cfg)
    try:
        trace = run_closed_loop(sys_, cost, kappa, mpc, x0, cfg.T_sim,
                                eps_NM=max(margin_cert.eps_NM, 0.0),
                                sample_time=cfg.plant.Ts)
    except SimulationFailure:
        row = ",".join(prefix + ["solver-failure", "no", "no", ""])
        return row, None
    report = verify_guarantees(trace, margin_cert)
    write_trace_csv(trace, out_dir / f"trace_N{N}_M{M}_x{x0_index}.csv")
    row = ",".join(prefix + [
        "completed",
        "yes" if report.all_passed else "no",
        "yes" if report.converged else "no",
        repr(report.final_lmin_ratio),
    ])
    return row, report


def _cmd_sweep(cfg: RunConfig, out_dir: Path) -> int:
    _require_vbar(cfg)
    if not cfg.sweep_pairs:
        raise ConfigError("[sweep] pairs must list at least one (N, M) design point")
    x0s = list(cfg.sweep_x0s)
    if not x0s:
        if cfg.x0 is None:
            raise ConfigError("[sweep] needs x0s or a [simulate] x0")
        x0s = [cfg.x0]
    sys_, cost, kappa = build_problem(cfg)
    cert = estimate_controllability(sys_, cost, kappa, cfg.sampling)
    header = ("N,M,x0_index,eps_NM_analytic,certified_analytic,eps_NM_empirical,"
              "certified_empirical,margin_path,cell_status,verified,converged,"
              "final_lmin_ratio")
    cells = [(pair, i, x0) for pair in cfg.sweep_pairs for i, x0 in enumerate(x0s)]
    with ThreadPoolExecutor(max_workers=cfg.sweep_workers) as pool:
        results = list(pool.map(
            lambda cell: _sweep_cell(cfg, cert, cell[0], cell[1], cell[2], out_dir),
            cells))
    rows = [header] + [row for row, _ in results]
    _write(out_dir / "sweep.csv", rows)
    print("\n".join(rows))
    all_ok = all(report is not None and report.all_passed for _, report in results)
    return 0 if all_ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="tailmpc",
        description="Finite-tail-cost MPC: certification and closed-loop runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    help_by_cmd = {
        "certify": "estimate decay constants and certify the configured horizons",
        "simulate": "run the closed loop and verify the certified guarantees",
        "compare": "report finite-tail thresholds next to the no-terminal bound",
        "sweep": "run a grid of (N, M) design points",
    }
    for name, text in help_by_cmd.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="path to a TOML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the certification seed")
        p.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_run_config(args.config, seed_override=args.seed)
        out_dir = Path(args.out or cfg.out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = {
            "certify": _cmd_certify,
            "simulate": _cmd_simulate,
            "compare": _cmd_compare,
            "sweep": _cmd_sweep,
        }[args.command]
        return handler(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=_sys.stderr)
        return 1
    except SimulationFailure as exc:
        print(f"solver failure: {exc}", file=_sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
