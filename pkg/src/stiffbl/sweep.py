"""Stiffness sweep: integrate the same data across an increasing gamma ladder,
aggregate diagnostics and compute the cross-gamma convergence evidence for the
incompressible free-boundary limit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .diagnostics import (DEFAULT_TOLERANCES, DiagnosticsReport,
                          TestFunctionSet, build_report, default_tests)
from .geometry import Grid
from .model import Constitutive, Model, ProblemData, StiffParams, validate_data
from .solver import SolverConfig, SolverError, State, Trajectory, run

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class SweepPlan:
    """Shared data plus a strictly increasing gamma ladder."""

    gammas: tuple[float, ...]
    grid: Grid
    constitutive: Constitutive
    alpha: float
    data: ProblemData
    solver_config: SolverConfig
    tests: TestFunctionSet | None = None

    def __post_init__(self):
        g = self.gammas
        if any(b <= a for a, b in zip(g, g[1:])) or any(v <= 1.0 for v in g):
            raise ValueError(f"gamma ladder must be strictly increasing and > 1: {g}")


@dataclass
class SweepMember:
    gamma: float
    trajectory: Trajectory | None
    report: DiagnosticsReport | None
    error: str | None = None


@dataclass
class SweepReport:
    gammas: tuple[float, ...]
    alpha: float
    members: list[SweepMember]
    cauchy_pairs: list[tuple[float, float]] = field(default_factory=list)
    cauchy_u: list[float] = field(default_factory=list)
    cauchy_p: list[float] = field(default_factory=list)
    verdicts: dict[str, dict] = field(default_factory=dict)
    contours: list[list] = field(default_factory=list)
    limit_u_range: tuple[float, float] | None = None
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    @property
    def all_pass(self) -> bool:
        return all(v["pass"] for v in self.verdicts.values())

    def ok_members(self) -> list[SweepMember]:
        return [m for m in self.members if m.error is None]


def cauchy_differences(member_a: SweepMember, member_b: SweepMember,
                       grid: Grid) -> tuple[float, float]:
    """Space-time L1 differences of density and pressure between two members."""
    ta, tb = member_a.trajectory, member_b.trajectory
    times_a, times_b = ta.times, tb.times
    if times_a.shape != times_b.shape or not np.allclose(times_a, times_b, atol=1e-12):
        raise ValueError("members have mismatched snapshot grids")
    vol = grid.cell_volume
    du = np.array([float(np.sum(np.abs(sa.u - sb.u)) * vol)
                   for sa, sb in zip(ta.snapshots, tb.snapshots)])
    dp = np.array([float(np.sum(np.abs(sa.u ** member_a.gamma
                                       - sb.u ** member_b.gamma)) * vol)
                   for sa, sb in zip(ta.snapshots, tb.snapshots)])
    return float(np.trapezoid(du, times_a)), float(np.trapezoid(dp, times_a))


def extract_free_boundary(state: State, grid: Grid, gamma: float,
                          threshold_fraction: float, p_M: float):
    """Cells (2D) or interpolated positions (1D) where pressure crosses the threshold."""
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError(f"threshold fraction must lie in (0, 1), got {threshold_fraction}")
    p = state.u ** gamma
    level = threshold_fraction * p_M
    f = grid.faces
    d = p - level
    crossing = d[f.left] * d[f.right] < 0.0
    if grid.dim == 1:
        xs = grid.axis_centers(0)
        out = []
        for fi in np.flatnonzero(crossing):
            l, r = f.left[fi], f.right[fi]
            frac = d[l] / (d[l] - d[r])
            out.append(float(xs[l] + frac * (xs[r] - xs[l])))
        return sorted(out)
    cells = set(f.left[crossing].tolist()) | set(f.right[crossing].tolist())
    return sorted(cells)


def monotone_region_check(traj: Trajectory, grid: Grid, gamma: float,
                          p_M: float, eps: float = 1e-3) -> dict:
    """Nesting of the pressure positivity sets {p > eps*p_M} across snapshots.

    Each set must be contained in the next one dilated by one cell. Returns a
    verdict dict with the first violating snapshot pair, if any.
    """
    level = eps * p_M
    masks = [(s.u ** gamma > level) for s in traj.snapshots]

    def dilate(m):
        if grid.dim == 1:
            out = m.copy()
            out[:-1] |= m[1:]
            out[1:] |= m[:-1]
            return out
        nx, ny = grid.counts
        mm = m.reshape(ny, nx)
        out = mm.copy()
        out[:, :-1] |= mm[:, 1:]
        out[:, 1:] |= mm[:, :-1]
        out[:-1, :] |= mm[1:, :]
        out[1:, :] |= mm[:-1, :]
        return out.ravel()

    for i in range(len(masks) - 1):
        allowed = dilate(masks[i + 1])
        if np.any(masks[i] & ~allowed):
            return {"pass": False, "first_violation": i,
                    "detail": f"positivity set shrank between snapshots {i} and {i + 1}"}
    return {"pass": True, "first_violation": None, "detail": ""}


def _run_member(plan: SweepPlan, gamma: float) -> SweepMember:
    stiff = StiffParams(gamma=gamma, alpha=plan.alpha)
    model = Model(plan.constitutive, stiff)
    validate_data(plan.data, plan.grid, stiff, plan.constitutive)
    initial = State(time=0.0, u=np.asarray(plan.data.u0, dtype=float))
    tests = plan.tests or default_tests(plan.grid, plan.data.horizon)
    try:
        traj = run(initial, model, plan.grid, plan.solver_config, plan.data)
    except SolverError as exc:
        return SweepMember(gamma=gamma, trajectory=None, report=None,
                           error=f"{type(exc).__name__}: {exc}")
    report = build_report(traj, plan.grid, model, plan.data, tests=tests)
    return SweepMember(gamma=gamma, trajectory=traj, report=report)


def _trend_verdicts(report: SweepReport, plan: SweepPlan) -> None:
    tol = report.tolerances
    ok = report.ok_members()
    v = report.verdicts

    v["members_completed"] = {
        "pass": len(ok) == len(report.gammas),
        "value": len(ok), "threshold": len(report.gammas),
        "detail": "; ".join(m.error for m in report.members if m.error) or "",
    }
    if len(ok) < 2:
        return

    graph = [m.report.scalars["graph_residual"] for m in ok]
    v["graph_monotone"] = {
        "pass": all(b <= a * (1.0 + 1e-12) for a, b in zip(graph, graph[1:])),
        "value": graph, "threshold": "non-increasing", "detail": "",
    }
    v["graph_ratio"] = {
        "pass": graph[-1] <= tol["graph_ratio"] * graph[0],
        "value": graph[-1] / graph[0] if graph[0] else 0.0,
        "threshold": tol["graph_ratio"], "detail": "",
    }

    if "incomp_residual" in ok[0].report.scalars:
        inc = [m.report.scalars["incomp_residual"] for m in ok]
        v["incomp_ratio"] = {
            "pass": inc[-1] <= tol["incomp_ratio"] * inc[0],
            "value": inc[-1] / inc[0] if inc[0] else 0.0,
            "threshold": tol["incomp_ratio"], "detail": "",
        }

    # band test on norms; the gradient L2 quantity is stored squared
    bands = {}
    for key in ("grad_u_l1", "grad_p_l1", "dt_u_l1", "dt_p_l1", "grad_p_l2_sq"):
        vals = np.array([m.report.scalars[key] for m in ok])
        if key == "grad_p_l2_sq":
            vals = np.sqrt(vals)
        med = float(np.median(vals))
        bands[key] = float(vals.max() / med) if med > 0 else 1.0
    v["uniform_bands"] = {
        "pass": all(r <= tol["uniform_band"] for r in bands.values()),
        "value": bands, "threshold": tol["uniform_band"], "detail": "",
    }

    cu, cp = report.cauchy_u, report.cauchy_p
    if cu:
        v["cauchy_decreasing"] = {
            "pass": all(b <= a * (1.0 + 1e-12) for a, b in zip(cu, cu[1:]))
            and all(b <= a * (1.0 + 1e-12) for a, b in zip(cp, cp[1:])),
            "value": {"u": cu, "p": cp}, "threshold": "non-increasing", "detail": "",
        }
        v["cauchy_ratio"] = {
            "pass": (cu[-1] <= tol["cauchy_ratio"] * cu[0]
                     and cp[-1] <= tol["cauchy_ratio"] * cp[0]),
            "value": {"u": cu[-1] / cu[0] if cu[0] else 0.0,
                      "p": cp[-1] / cp[0] if cp[0] else 0.0},
            "threshold": tol["cauchy_ratio"], "detail": "",
        }

    p_M = plan.constitutive.p_M
    mono = [m.report.scalars["mono_margin_p"] for m in ok]
    mono_valid = [m for m in mono if not np.isnan(m)]
    v["mono_margin"] = {
        "pass": all(m >= -tol["mono_margin_rel"] * p_M for m in mono_valid),
        "value": min(mono_valid) if mono_valid else None,
        "threshold": -tol["mono_margin_rel"] * p_M,
        "detail": "" if mono_valid else "no source term: bound inapplicable",
    }
    slack = [min(m.report.scalars["l1_slack_u_min"]
                 / max(m.report.scalars["l1_rhs_u"], 1e-300),
                 m.report.scalars["l1_slack_p_min"]
                 / max(m.report.scalars["l1_rhs_p"], 1e-300)) for m in ok]
    v["l1_bounds"] = {
        "pass": all(s >= -tol["l1_slack_rel"] for s in slack),
        "value": min(slack), "threshold": -tol["l1_slack_rel"], "detail": "",
    }

    last = ok[-1]
    gamma_max = last.gamma
    tol_gamma = p_M ** (1.0 / gamma_max) - 1.0 + 1e-10
    u_min = min(float(s.u.min()) for s in last.trajectory.snapshots)
    u_max = max(float(s.u.max()) for s in last.trajectory.snapshots)
    report.limit_u_range = (u_min, u_max)
    v["limit_bounds"] = {
        "pass": u_min >= 0.0 and u_max <= 1.0 + tol_gamma,
        "value": {"min": u_min, "max": u_max},
        "threshold": 1.0 + tol_gamma, "detail": "",
    }
    v["monotone_region"] = monotone_region_check(
        last.trajectory, plan.grid, gamma_max, p_M)


def run_sweep(plan: SweepPlan, contour_eps: float = 1e-3) -> SweepReport:
    """Integrate every ladder member, aggregate diagnostics and verdicts.

    Member failures are recorded in the report without aborting the sweep.
    """
    members = [_run_member(plan, g) for g in plan.gammas]
    report = SweepReport(gammas=tuple(plan.gammas), alpha=plan.alpha, members=members)
    ok = report.ok_members()
    for a, b in zip(ok[:-1], ok[1:]):
        cu, cp = cauchy_differences(a, b, plan.grid)
        report.cauchy_pairs.append((a.gamma, b.gamma))
        report.cauchy_u.append(cu)
        report.cauchy_p.append(cp)
    if ok:
        last = ok[-1]
        p_M = plan.constitutive.p_M
        report.contours = [
            extract_free_boundary(s, plan.grid, last.gamma, contour_eps, p_M)
            for s in last.trajectory.snapshots]
    _trend_verdicts(report, plan)
    return report
