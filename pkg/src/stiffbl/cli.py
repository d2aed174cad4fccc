"""Command-line entry point.

Subcommands: ``run`` (single stiffness value), ``sweep`` (full ladder),
``oracle-check`` (oracle self-verifications plus quick solver-vs-oracle
cases) and ``verify`` (recompute diagnostics from stored fields).

Exit codes: 0 = ran with every verdict passing, 2 = ran but some verdict or
check failed, 1 = operational error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from . import oracle
from .config import (ConfigError, build_grid_from_config, build_plan,
                     default_config, parse_config)
from .model import ConstitutiveError, DataValidationError
from .solver import SolverError
from .sweep import SweepPlan, _run_member, run_sweep


def _load_config(path: str | None):
    if path is None:
        return default_config()
    return parse_config(Path(path).read_text())


def _member_worker(cfg_text: str, gamma: float):
    cfg = parse_config(cfg_text)
    plan = build_plan(cfg)
    return _run_member(plan, gamma)


def _assemble_parallel(cfg, plan: SweepPlan, workers: int):
    from .sweep import SweepReport, _trend_verdicts, cauchy_differences, extract_free_boundary

    cfg_text = cfg.to_ini()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        members = list(pool.map(_member_worker,
                                [cfg_text] * len(plan.gammas), plan.gammas))
    report = SweepReport(gammas=tuple(plan.gammas), alpha=plan.alpha,
                         members=members)
    ok = report.ok_members()
    for a, b in zip(ok[:-1], ok[1:]):
        cu, cp = cauchy_differences(a, b, plan.grid)
        report.cauchy_pairs.append((a.gamma, b.gamma))
        report.cauchy_u.append(cu)
        report.cauchy_p.append(cp)
    if ok:
        last = ok[-1]
        report.contours = [
            extract_free_boundary(s, plan.grid, last.gamma,
                                  cfg.get("diagnostics", "contour_eps"),
                                  plan.constitutive.p_M)
            for s in last.trajectory.snapshots]
    _trend_verdicts(report, plan)
    return report


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    gamma = args.gamma if args.gamma is not None else cfg.get("stiff", "gamma")
    plan = build_plan(cfg, gammas=(gamma,))
    report = run_sweep(plan, contour_eps=cfg.get("diagnostics", "contour_eps"))
    manifest = sio.emit_outputs(report, plan.grid, cfg, args.out)
    print(f"wrote {len(manifest)} files to {args.out}")
    _print_verdicts(report)
    return 0 if report.all_pass else 2


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    plan = build_plan(cfg)
    if args.parallel > 1:
        report = _assemble_parallel(cfg, plan, args.parallel)
    else:
        report = run_sweep(plan, contour_eps=cfg.get("diagnostics", "contour_eps"))
    manifest = sio.emit_outputs(report, plan.grid, cfg, args.out)
    print(f"wrote {len(manifest)} files to {args.out}")
    _print_verdicts(report)
    return 0 if report.all_pass else 2


def _print_verdicts(report) -> None:
    for name, v in report.verdicts.items():
        mark = "pass" if v["pass"] else "FAIL"
        print(f"  [{mark}] {name}: value={v.get('value')} threshold={v.get('threshold')}")


def _cmd_oracle_check(args) -> int:
    failed = False
    try:
        results = oracle.run_all_self_checks()
        for name, val in results.items():
            print(f"  [pass] oracle self-check {name}: {val}")
    except AssertionError as exc:
        print(f"  [FAIL] oracle self-check: {exc}")
        failed = True

    # quick solver-vs-oracle cases
    from .model import Model, ProblemData, StiffParams, preset_linear, preset_pme_override
    from .solver import SolverConfig, State, run

    cfg = default_config()
    grid = build_grid_from_config(parse_config("[grid]\nnx = 8\n"))
    const = preset_linear()
    model = Model(const, StiffParams(gamma=2.0, alpha=2.0))
    u0 = np.full(grid.n_cells, 0.5)
    data = ProblemData(u0=u0, boundary_flux=lambda t, c: np.zeros(c.shape[0]),
                       horizon=1.0)
    sc = SolverConfig(dt_initial=1e-3, dt_min=1e-3, dt_max=1e-3,
                      snapshot_times=(1.0,))
    traj = run(State(0.0, u0), model, grid, sc, data)
    err = abs(float(traj.snapshots[-1].u[0]) - oracle.uniform_ode(0.5, 2.0, 2.0, 1.0, 1.0))
    ok = err < 1e-4
    print(f"  [{'pass' if ok else 'FAIL'}] solver vs uniform-ode oracle: "
          f"error {err:.3e} (dt=1e-3)")
    failed = failed or not ok

    m = 2.0
    C = 0.3
    bgrid = build_grid_from_config(parse_config(
        "[grid]\nx_min = -2\nx_max = 2\nnx = 100\n"))
    xs = bgrid.axis_centers(0)
    u_init = oracle.barenblatt(m, 1, C, 0.5, xs)
    pme = Model(preset_pme_override(), StiffParams(gamma=m, alpha=60.0))
    bdata = ProblemData(u0=u_init, boundary_flux=lambda t, c: np.zeros(c.shape[0]),
                        horizon=0.5)
    bsc = SolverConfig(dt_initial=0.01, dt_min=1e-6, dt_max=0.01,
                      snapshot_times=(0.5,))
    btraj = run(State(0.0, u_init), pme, bgrid, bsc, bdata)
    u_ref = oracle.barenblatt(m, 1, C, 1.0, xs)
    l1 = float(np.sum(np.abs(btraj.snapshots[-1].u - u_ref)) * bgrid.cell_volume)
    ok = l1 < 0.05
    print(f"  [{'pass' if ok else 'FAIL'}] solver vs self-similar diffusion "
          f"oracle: L1 error {l1:.3e} at h=0.04")
    failed = failed or not ok
    return 2 if failed else 0


def _cmd_verify(args) -> int:
    result = sio.verify_outputs(args.out)
    print(f"checked {result['checked']} snapshots")
    for line in result["mismatches"][:20]:
        print(f"  mismatch: {line}")
    print("verification " + ("passed" if result["ok"] else "FAILED"))
    return 0 if result["ok"] else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stiffbl",
        description="Finite-volume stiff-pressure flow solver and sweep harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a single stiffness value")
    p_run.add_argument("--config", help="path to a config document")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--gamma", type=float, help="override [stiff] gamma")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="integrate the full gamma ladder")
    p_sweep.add_argument("--config", help="path to a config document")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--parallel", type=int, default=1,
                         help="worker cap for concurrent members")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_oracle = sub.add_parser("oracle-check",
                              help="run oracle self-verifications and quick "
                                   "solver-vs-oracle cases")
    p_oracle.set_defaults(fn=_cmd_oracle_check)

    p_verify = sub.add_parser("verify",
                              help="recompute diagnostics from stored fields")
    p_verify.add_argument("--out", required=True, help="output directory to verify")
    p_verify.set_defaults(fn=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ConstitutiveError, DataValidationError, SolverError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
