"""Serialization of sweep results: summary JSON, per-member CSV series and
field snapshots, tidy long-format tables for plotting, and the verification
path that recomputes diagnostics from stored fields."""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .config import (RunConfig, build_constitutive, build_grid_from_config,
                     parse_config)
from .diagnostics import (SERIES_COLUMNS, monotonicity_pair_margin,
                          snapshot_scalars)
from .geometry import Grid
from .model import Model, StiffParams
from .sweep import SweepReport

_ECHO_NAME = "config.echo.ini"


def _fmt(v) -> str:
    f = float(v)
    return "nan" if math.isnan(f) else f"{f:.17g}"


def _gamma_tag(gamma: float) -> str:
    return f"{gamma:.17g}"


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def emit_outputs(report: SweepReport, grid: Grid, cfg: RunConfig,
                 out_dir) -> list[str]:
    """Write the result tree and return the manifest of files written.

    A ``.partial`` marker exists while writing and is removed on success, so
    an interrupted emission is detectable.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    marker = out / ".partial"
    marker.write_text("")
    manifest: list[str] = []

    def record(path: Path):
        manifest.append(str(path.relative_to(out)))

    echo = out / _ECHO_NAME
    echo.write_text(cfg.to_ini())
    record(echo)

    summary = {
        "config_version": cfg.get("meta", "config_version"),
        "gammas": list(report.gammas),
        "alpha": report.alpha,
        "all_pass": report.all_pass,
        "verdicts": report.verdicts,
        "cauchy": {"pairs": report.cauchy_pairs,
                   "u": report.cauchy_u, "p": report.cauchy_p},
        "limit_u_range": report.limit_u_range,
        "tolerances": report.tolerances,
        "members": {},
        "failures": {_gamma_tag(m.gamma): m.error
                     for m in report.members if m.error},
    }
    for m in report.members:
        if m.report is not None:
            summary["members"][_gamma_tag(m.gamma)] = m.report.scalars

    for m in report.members:
        if m.trajectory is None:
            continue
        mdir = out / f"member_{_gamma_tag(m.gamma)}"
        mdir.mkdir(exist_ok=True)
        series = m.report.series
        spath = mdir / "series.csv"
        with spath.open("w") as fh:
            fh.write(",".join(SERIES_COLUMNS) + "\n")
            for i in range(series["time"].size):
                fh.write(",".join(_fmt(series[c][i]) for c in SERIES_COLUMNS) + "\n")
        record(spath)
        centers = grid.cell_centers()
        header = ("x,u,p" if grid.dim == 1 else "x,y,u,p") + "\n"
        for k, snap in enumerate(m.trajectory.snapshots):
            fpath = mdir / f"field_{k}.csv"
            p = snap.u ** m.gamma
            with fpath.open("w") as fh:
                fh.write(header)
                for i in range(grid.n_cells):
                    coords = ",".join(_fmt(c) for c in centers[i])
                    fh.write(f"{coords},{_fmt(snap.u[i])},{_fmt(p[i])}\n")
            record(fpath)

    # tidy long-format tables for external plotting
    pdir = out / "plots"
    pdir.mkdir(exist_ok=True)
    long_path = pdir / "summary_long.csv"
    with long_path.open("w") as fh:
        fh.write("gamma,quantity,value\n")
        for m in report.members:
            if m.report is None:
                continue
            for key, val in sorted(m.report.scalars.items()):
                fh.write(f"{_fmt(m.gamma)},{key},{_fmt(val)}\n")
    record(long_path)
    cauchy_path = pdir / "cauchy.csv"
    with cauchy_path.open("w") as fh:
        fh.write("gamma,quantity,value\n")
        for (_, gb), cu, cp in zip(report.cauchy_pairs,
                                   report.cauchy_u, report.cauchy_p):
            fh.write(f"{_fmt(gb)},cauchy_u_from_prev,{_fmt(cu)}\n")
            fh.write(f"{_fmt(gb)},cauchy_p_from_prev,{_fmt(cp)}\n")
    record(cauchy_path)

    spath = out / "summary.json"
    spath.write_text(json.dumps(summary, indent=2, default=_json_default))
    record(spath)

    marker.unlink()
    return sorted(manifest)


# ---------------------------------------------------------------------------
# read-back and verification


def read_series(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(r[j]) for r in rows])
            for j, name in enumerate(header)}
    return cols

def read_field(path, dim: int) -> tuple[np.ndarray, np.ndarray]:
    with open(path) as fh:
        fh.readline()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    u = np.array([float(r[dim]) for r in rows])
    p = np.array([float(r[dim + 1]) for r in rows])
    return u, p


def _recompute_series_row(u: np.ndarray, t: float, grid: Grid, model: Model,
                          t_floor: float, u_prev: np.ndarray | None,
                          t_prev: float | None) -> dict[str, float]:
    row = snapshot_scalars(u, t, grid, model, t_floor)
    if u_prev is not None and t > t_prev and t > 0.0:
        row["mono_margin"] = monotonicity_pair_margin(u_prev, u, t_prev, t, model)
    return row


def verify_outputs(out_dir) -> dict:
    """Recompute per-snapshot diagnostics from stored fields and compare
    bit-identically against the stored series. Returns {ok, checked, mismatches}."""
    out = Path(out_dir)
    if (out / ".partial").exists():
        return {"ok": False, "checked": 0,
                "mismatches": ["output directory carries a .partial marker"]}
    cfg = parse_config((out / _ECHO_NAME).read_text())
    grid = build_grid_from_config(cfg)
    constitutive = build_constitutive(cfg)
    t_floor_frac = cfg.get("diagnostics", "ba_time_floor_frac")

    mismatches: list[str] = []
    checked = 0
    for mdir in sorted(out.glob("member_*")):
        gamma = float(mdir.name.split("_", 1)[1])
        model = Model(constitutive, StiffParams(gamma=gamma,
                                                alpha=cfg.get("stiff", "alpha")))
        series = read_series(mdir / "series.csv")
        times = series["time"]
        t_floor = t_floor_frac * float(times[-1])
        u_prev = None
        t_prev = None
        for k, t in enumerate(times):
            u, p_stored = read_field(mdir / f"field_{k}.csv", grid.dim)
            p_recomputed = u ** gamma
            if not np.array_equal(p_recomputed, p_stored):
                mismatches.append(f"{mdir.name}/field_{k}.csv: pressure column")
            row = _recompute_series_row(u, float(t), grid, model, t_floor,
                                        u_prev, t_prev)
            for col in SERIES_COLUMNS:
                stored = float(series[col][k])
                new = float(row[col])
                same = (math.isnan(stored) and math.isnan(new)) or stored == new
                if not same:
                    mismatches.append(
                        f"{mdir.name} row {k} column {col}: "
                        f"stored {stored!r} != recomputed {new!r}")
            checked += 1
            u_prev, t_prev = u, float(t)
    return {"ok": not mismatches, "checked": checked, "mismatches": mismatches}
