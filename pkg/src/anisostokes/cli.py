"""Command-line driver: single runs, parameter sweeps and tensor audits.

Every subcommand reads one config file, writes its artifacts (snapshots,
CSV tables) to the output directory and prints one PASS/FAIL line per
audit.  With ``--strict`` the exit code is 0 only when every audit passed;
without it the audits are informational and the exit code is 0 unless an
error is raised.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from anisostokes.config import KNOWN_KEYS, make_forcing, make_initial, parse_config
from anisostokes.diagnostics import (
    DefectParams,
    defect_inequality_audit,
    energy_violation,
    pressure_l2_audit,
    rows_for_trajectory,
    write_rows_csv,
)
from anisostokes.fields import write_snapshot
from anisostokes.marching import direct_march, march
from anisostokes.viscosity import DiagNu, audit_hypotheses


def _audit(results, name, ok, detail):
    results.append((name, bool(ok)))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return bool(ok)


def _march_config(cfg, params=None, tensor=None):
    rho0 = make_initial(cfg.initial, cfg.grid)
    f = make_forcing(cfg.forcing, cfg.grid)
    return march(
        tensor if tensor is not None else cfg.tensor,
        rho0,
        f,
        params if params is not None else cfg.params,
        cfg.t_end,
        cfg.slab,
        store_every=cfg.store_every,
    )


def _write_trajectory(traj, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for i, t in enumerate(traj.times):
        write_snapshot(os.path.join(out_dir, f"rho_{i:06d}.asf"), traj.densities[i], t)
        for a, comp in enumerate(traj.velocities[i].components):
            write_snapshot(os.path.join(out_dir, f"u{a}_{i:06d}.asf"), comp, t)


def _standard_audits(traj, cfg, results):
    mass0 = traj.ledgers[0].mass_initial
    worst = max(ledger.identity_defect() for ledger in traj.ledgers)
    _audit(
        results,
        "mass-identity",
        worst <= 1e-10 * mass0,
        f"max defect {worst:.3e} against 1e-10 * {mass0:.6g}",
    )

    _audit(
        results,
        "positivity",
        traj.min_rho_ever >= 0.0,
        f"min density {traj.min_rho_ever:.6g}",
    )

    if cfg.params.eta == 0.0:
        scale = max(1.0, max(r.max() for r in traj.densities))
        _audit(
            results,
            "max-principle",
            traj.max_principle_margin >= -1e-12 * scale,
            f"worst margin {traj.max_principle_margin:.3e}",
        )

    e0 = traj.initial_pressure_integral()
    violation = energy_violation(traj)
    _audit(
        results,
        "energy-slack",
        violation <= 1e-2 * max(e0, 1e-300),
        f"violation {violation:.3e} against 1e-2 * {e0:.6g}",
    )

    dp = DefectParams(window=cfg.diagnostics.window, h_reg=cfg.diagnostics.h_reg)
    lhs, rhs, ok = defect_inequality_audit(traj, cfg.params.gamma, dp)
    _audit(
        results,
        "defect-inequality",
        ok,
        f"lhs {lhs:.6g} against rhs {rhs:.6g} (window {dp.window})",
    )


def cmd_run(cfg, out_dir):
    results = []
    traj = _march_config(cfg)
    _write_trajectory(traj, out_dir)
    rows = rows_for_trajectory(
        traj,
        dp=DefectParams(window=cfg.diagnostics.window, h_reg=cfg.diagnostics.h_reg),
        commutator_delta=cfg.diagnostics.commutator_delta,
    )
    write_rows_csv(rows, os.path.join(out_dir, "diagnostics.csv"))
    _standard_audits(traj, cfg, results)
    print(f"wrote {len(traj)} snapshots and diagnostics.csv to {out_dir}")
    return results


def cmd_sweep_delta(cfg, out_dir):
    results = []
    deltas = tuple(sorted(cfg.sweep_deltas, reverse=True))
    if len(deltas) < 2:
        raise ValueError("sweep.deltas needs at least two levels")

    finals = []
    for d in deltas:
        traj = _march_config(cfg, params=replace(cfg.params, delta=d))
        finals.append(traj.final_density)

    rho0 = make_initial(cfg.initial, cfg.grid)
    f = make_forcing(cfg.forcing, cfg.grid)
    direct = direct_march(
        cfg.tensor, rho0, f, replace(cfg.params, delta=0.0), cfg.t_end,
        store_every=cfg.store_every,
    ).final_density

    gaps = [
        (finals[i + 1] - finals[i]).l2_norm() for i in range(len(finals) - 1)
    ]
    to_direct = [(rho - direct).l2_norm() for rho in finals]

    os.makedirs(out_dir, exist_ok=True)
    lines = ["delta,gap_to_coarser,dist_to_direct"]
    for i, d in enumerate(deltas):
        gap = "" if i == 0 else "%.17g" % gaps[i - 1]
        lines.append(f"%.17g,{gap},%.17g" % (d, to_direct[i]))
    with open(os.path.join(out_dir, "sweep_delta.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    ratios = [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 1)]
    _audit(
        results,
        "delta-contraction",
        all(r <= 0.7 for r in ratios),
        "successive gap ratios " + ", ".join(f"{r:.3f}" for r in ratios),
    )
    _audit(
        results,
        "delta-limit",
        to_direct[-1] <= 2.0 * gaps[-1],
        f"finest-to-direct {to_direct[-1]:.3e} against 2 * last gap {gaps[-1]:.3e}",
    )
    print(f"wrote sweep_delta.csv to {out_dir}")
    return results


def cmd_sweep_eps(cfg, out_dir):
    results = []
    levels = tuple(cfg.sweep_eps_levels)
    if not levels:
        raise ValueError("sweep.eps_levels must not be empty")

    rows = []
    pressures = []
    for level in levels:
        traj = _march_config(
            cfg, params=replace(cfg.params, eps=level, eta=level)
        )
        mass0 = traj.ledgers[0].mass_initial
        defect = max(ledger.identity_defect() for ledger in traj.ledgers)
        violation = energy_violation(traj)
        pl2 = pressure_l2_audit(traj)
        pressures.append(pl2)
        rows.append((level, defect, violation, pl2))
        e0 = traj.initial_pressure_integral()
        _audit(
            results,
            f"mass-identity[{level:g}]",
            defect <= 1e-10 * mass0,
            f"max defect {defect:.3e}",
        )
        _audit(
            results,
            f"energy-slack[{level:g}]",
            violation <= 1e-2 * max(e0, 1e-300),
            f"violation {violation:.3e}",
        )

    os.makedirs(out_dir, exist_ok=True)
    lines = ["level,mass_defect,energy_violation,pressure_l2"]
    for row in rows:
        lines.append(",".join("%.17g" % v for v in row))
    with open(os.path.join(out_dir, "sweep_eps.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    spread = max(pressures) / max(min(pressures), 1e-300)
    _audit(
        results,
        "pressure-l2-uniform",
        spread <= 2.0,
        f"max/min pressure L2 {spread:.3f} against 2.0",
    )
    print(f"wrote sweep_eps.csv to {out_dir}")
    return results


def cmd_defect_study(cfg, out_dir):
    results = []
    if not isinstance(cfg.tensor, DiagNu):
        raise ValueError("the defect study scales a per-axis viscosity; use viscosity.kind = diag")
    base = cfg.tensor.nu

    os.makedirs(out_dir, exist_ok=True)
    lines = ["ratio,window,lhs,rhs,passed"]
    all_ok = True
    for ratio in cfg.defect_ratios:
        nu = base[:-1] + (base[-1] * ratio,)
        traj = _march_config(cfg, tensor=DiagNu(nu))
        for window in cfg.defect_windows:
            dp = DefectParams(window=window, h_reg=cfg.diagnostics.h_reg)
            lhs, rhs, ok = defect_inequality_audit(traj, cfg.params.gamma, dp)
            all_ok = all_ok and ok
            lines.append(
                "%.17g,%d,%.17g,%.17g,%s"
                % (ratio, window, lhs, rhs, "true" if ok else "false")
            )
    with open(os.path.join(out_dir, "defect_study.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    _audit(
        results,
        "defect-inequality-study",
        all_ok,
        f"ratios {tuple(cfg.defect_ratios)} x windows {tuple(cfg.defect_windows)}",
    )
    print(f"wrote defect_study.csv to {out_dir}")
    return results


def cmd_check_tensor(cfg, out_dir):
    results = []
    report = audit_hypotheses(cfg.tensor, cfg.grid, seed=cfg.seed)
    _audit(
        results,
        "symmetric-stress",
        report.h1_passed,
        f"max residual {report.h1_max_residual:.3e}",
    )
    _audit(
        results,
        "coercivity",
        report.coercivity.passed,
        f"c_est {report.coercivity.c_est:.6g} ({report.coercivity.method}, seed {report.coercivity.seed})",
    )
    if report.h4_symbol_invertible is not None:
        norm = (
            "not sampled"
            if report.h4_sample_norm is None
            else f"{report.h4_sample_norm:.6g}"
        )
        _audit(
            results,
            "symbol-invertible",
            report.h4_symbol_invertible,
            f"sampled inverse-gradient norm {norm}",
        )
    print(f"note: {report.h2_note}")
    return results


_COMMANDS = {
    "run": cmd_run,
    "sweep-delta": cmd_sweep_delta,
    "sweep-eps": cmd_sweep_eps,
    "defect-study": cmd_defect_study,
    "check-tensor": cmd_check_tensor,
}


def _key_help():
    width = max(len(k) for k in KNOWN_KEYS)
    rows = [f"  {k.ljust(width)}  default: {v}" for k, v in KNOWN_KEYS.items()]
    return "config keys (key = value per line, # comments):\n" + "\n".join(rows)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aniso-stokes",
        description="Periodic compressible Stokes solver with anisotropic viscosity.",
        epilog=_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"{name} study")
        p.add_argument("config", help="path to the run configuration file")
        p.add_argument(
            "--strict",
            action="store_true",
            help="exit nonzero unless every audit passes",
        )
        p.add_argument("--out", default=None, help="output directory (overrides run.out)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    cfg = parse_config(args.config)
    out_dir = args.out if args.out is not None else cfg.out
    results = _COMMANDS[args.command](cfg, out_dir)

    failed = [name for name, ok in results if not ok]
    if failed:
        print(f"{len(failed)} of {len(results)} audits failed: {', '.join(failed)}")
    else:
        print(f"all {len(results)} audits passed")
    if args.strict and failed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
