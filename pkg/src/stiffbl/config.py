"""Sectioned key-value run configuration: parsing, strict validation,
defaults materialization and the effective-config echo.

The echo of a parsed config is itself a parseable document that reproduces
the run (closure property); unknown sections or keys are rejected with their
key path.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import TestFunctionSet, default_tests
from .geometry import Grid, build_grid
from .model import Constitutive, ProblemData, StiffParams, make_preset
from .solver import SolverConfig
from .sweep import SweepPlan

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _float_list(text: str) -> tuple[float, ...]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    return tuple(float(s) for s in items)


# section -> key -> (parser, default-as-string)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "meta": {
        "config_version": (int, str(CONFIG_VERSION)),
    },
    "grid": {
        "dim": (int, "1"),
        "x_min": (float, "0.0"),
        "x_max": (float, "1.0"),
        "nx": (int, "200"),
        "y_min": (float, "0.0"),
        "y_max": (float, "1.0"),
        "ny": (int, "16"),
    },
    "model": {
        "preset": (str, "linear"),
        "p_m": (float, "1.0"),
        "phi_scale": (float, "1.0"),
        "delta": (float, "0.1"),
    },
    "stiff": {
        "gamma": (float, "8.0"),
        "alpha": (float, "2.0"),
    },
    "data": {
        "u0_kind": (str, "block"),
        "u0_value": (float, "0.9"),
        "u0_edge": (float, "0.3"),
        "f_left": (float, "0.5"),
        "f_right": (float, "-0.05"),
        "f_bottom": (float, "0.0"),
        "f_top": (float, "0.0"),
        "flux_floor": (float, "0.05"),
        "horizon": (float, "1.0"),
        "outflux_switch": (float, "1e-6"),
    },
    "solver": {
        "dt_initial": (float, "1e-3"),
        "dt_min": (float, "1e-9"),
        "dt_max": (float, "2e-2"),
        "newton_tol": (float, "1e-10"),
        "newton_max_iter": (int, "30"),
        "linear_tol": (float, "1e-12"),
        "snapshot_times": (_float_list,
                           "0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, "
                           "0.6, 0.7, 0.8, 0.9, 1.0"),
    },
    "sweep": {
        "ladder": (_float_list, "4, 8, 16, 32, 64, 128"),
    },
    "diagnostics": {
        "test_centers": (_float_list, "0.15, 0.3, 0.45"),
        "test_radius": (float, "0.1"),
        "contour_eps": (float, "1e-3"),
        "ba_time_floor_frac": (float, "0.05"),
    },
}

_LIST_KEYS = {("solver", "snapshot_times"), ("sweep", "ladder"),
              ("diagnostics", "test_centers")}


@dataclass(frozen=True)
class RunConfig:
    """Fully materialized configuration; compare by value."""

    values: tuple  # ((section, ((key, value), ...)), ...) for hashability

    def get(self, section: str, key: str):
        return dict(dict(self.values)[section])[key]

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values}

    def to_ini(self) -> str:
        """Effective-config echo: every key materialized, reparseable."""
        out = io.StringIO()
        for section, kv in self.values:
            out.write(f"[{section}]\n")
            for key, value in kv:
                if isinstance(value, tuple):
                    text = ", ".join(f"{v:.17g}" for v in value)
                elif isinstance(value, float):
                    text = f"{value:.17g}"
                else:
                    text = str(value)
                out.write(f"{key} = {text}\n")
            out.write("\n")
        return out.getvalue()


def _validate(cfg_dict: dict) -> None:
    g = cfg_dict["grid"]
    if g["dim"] not in (1, 2):
        raise ConfigError(f"[grid] dim: must be 1 or 2, got {g['dim']}")
    for nkey in ("nx",) + (("ny",) if g["dim"] == 2 else ()):
        if g[nkey] < 3:
            raise ConfigError(f"[grid] {nkey}: need at least 3 cells, got {g[nkey]}")
    if g["x_max"] <= g["x_min"]:
        raise ConfigError("[grid] x_max: extent is degenerate")
    if g["dim"] == 2 and g["y_max"] <= g["y_min"]:
        raise ConfigError("[grid] y_max: extent is degenerate")

    m = cfg_dict["model"]
    if m["p_m"] <= 0.0:
        raise ConfigError(
            f"[model] p_m: must be positive (hypothesis A requires a positive "
            f"homeostatic pressure), got {m['p_m']}")
    if m["delta"] <= 0.0:
        raise ConfigError(f"[model] delta: must be positive, got {m['delta']}")

    s = cfg_dict["stiff"]
    if not s["gamma"] > 1.0:
        raise ConfigError(
            f"[stiff] gamma: must be strictly greater than 1, got {s['gamma']}")
    if not s["alpha"] > 1.0:
        raise ConfigError(
            f"[stiff] alpha: must be strictly greater than 1, got {s['alpha']}")

    d = cfg_dict["data"]
    if d["u0_kind"] not in ("block", "uniform", "zero"):
        raise ConfigError(f"[data] u0_kind: unknown kind {d['u0_kind']!r}")
    if d["u0_value"] < 0.0:
        raise ConfigError(
            f"[data] u0_value: hypothesis B requires non-negative initial "
            f"density, got {d['u0_value']}")
    if d["horizon"] < 0.0:
        raise ConfigError(f"[data] horizon: must be non-negative, got {d['horizon']}")
    if d["flux_floor"] < 0.0:
        raise ConfigError(f"[data] flux_floor: must be non-negative")
    if d["outflux_switch"] <= 0.0:
        raise ConfigError(f"[data] outflux_switch: must be positive")

    sv = cfg_dict["solver"]
    if not (sv["dt_min"] <= sv["dt_initial"] <= sv["dt_max"]):
        raise ConfigError("[solver] dt_initial: need dt_min <= dt_initial <= dt_max")
    for t in sv["snapshot_times"]:
        if not 0.0 <= t <= d["horizon"]:
            raise ConfigError(
                f"[solver] snapshot_times: {t:g} outside [0, horizon={d['horizon']:g}]")

    ladder = cfg_dict["sweep"]["ladder"]
    if any(v <= 1.0 for v in ladder) or any(
            b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError(
            "[sweep] ladder: must be strictly increasing with every entry > 1")

    dg = cfg_dict["diagnostics"]
    if not 0.0 < dg["contour_eps"] < 1.0:
        raise ConfigError("[diagnostics] contour_eps: must lie in (0, 1)")
    if dg["test_radius"] <= 0.0:
        raise ConfigError("[diagnostics] test_radius: must be positive")

    if cfg_dict["meta"]["config_version"] != CONFIG_VERSION:
        raise ConfigError(
            f"[meta] config_version: unsupported version "
            f"{cfg_dict['meta']['config_version']} (expected {CONFIG_VERSION})")


def parse_config(text: str) -> RunConfig:
    """Parse a sectioned key-value document, reject unknown keys, fill defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from None

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"[{section}]: unknown section")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")

    cfg_dict: dict = {}
    for section, keys in _SCHEMA.items():
        cfg_dict[section] = {}
        for key, (convert, default) in keys.items():
            raw = parser.get(section, key, fallback=default) \
                if parser.has_section(section) else default
            try:
                cfg_dict[section][key] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
    _validate(cfg_dict)
    values = tuple((s, tuple(kv.items())) for s, kv in cfg_dict.items())
    return RunConfig(values=values)


def default_config() -> RunConfig:
    return parse_config("")


# ---------------------------------------------------------------------------
# builders


def build_grid_from_config(cfg: RunConfig) -> Grid:
    dim = cfg.get("grid", "dim")
    if dim == 1:
        return build_grid(1, [(cfg.get("grid", "x_min"), cfg.get("grid", "x_max"))],
                          [cfg.get("grid", "nx")])
    return build_grid(2, [(cfg.get("grid", "x_min"), cfg.get("grid", "x_max")),
                          (cfg.get("grid", "y_min"), cfg.get("grid", "y_max"))],
                      [cfg.get("grid", "nx"), cfg.get("grid", "ny")])


def build_constitutive(cfg: RunConfig) -> Constitutive:
    preset = cfg.get("model", "preset")
    kwargs = {}
    if preset != "pme-override":
        kwargs = {"p_M": cfg.get("model", "p_m"),
                  "phi_scale": cfg.get("model", "phi_scale")}
    c = make_preset(preset, **kwargs)
    delta = cfg.get("model", "delta")
    if delta != c.delta:
        c = replace(c, delta=delta)
    return c


def build_stiff(cfg: RunConfig, gamma: float | None = None) -> StiffParams:
    return StiffParams(gamma=cfg.get("stiff", "gamma") if gamma is None else gamma,
                       alpha=cfg.get("stiff", "alpha"))


def _build_u0(cfg: RunConfig, grid: Grid) -> np.ndarray:
    kind = cfg.get("data", "u0_kind")
    value = cfg.get("data", "u0_value")
    centers = grid.cell_centers()
    if kind == "zero":
        return np.zeros(grid.n_cells)
    if kind == "uniform":
        return np.full(grid.n_cells, value)
    edge = cfg.get("data", "u0_edge")
    return np.where(centers[:, 0] < edge, value, 0.0)


def _side_flux_fn(cfg: RunConfig, grid: Grid):
    f_side = {(0, -1): cfg.get("data", "f_left"), (0, 1): cfg.get("data", "f_right"),
              (1, -1): cfg.get("data", "f_bottom"), (1, 1): cfg.get("data", "f_top")}
    faces = grid.faces
    per_face = np.array([f_side[(int(a), int(s))]
                         for a, s in zip(faces.baxis, faces.bsign)])

    def flux(t, centroids):
        if centroids.shape[0] == per_face.size:
            return per_face
        raise ValueError("boundary flux queried on an unexpected centroid set")

    return flux


def build_data(cfg: RunConfig, grid: Grid) -> ProblemData:
    return ProblemData(
        u0=_build_u0(cfg, grid),
        boundary_flux=_side_flux_fn(cfg, grid),
        flux_floor=cfg.get("data", "flux_floor"),
        horizon=cfg.get("data", "horizon"),
        outflux_switch=cfg.get("data", "outflux_switch"),
    )


def build_solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(
        dt_initial=cfg.get("solver", "dt_initial"),
        dt_min=cfg.get("solver", "dt_min"),
        dt_max=cfg.get("solver", "dt_max"),
        newton_tol=cfg.get("solver", "newton_tol"),
        newton_max_iter=cfg.get("solver", "newton_max_iter"),
        linear_tol=cfg.get("solver", "linear_tol"),
        snapshot_times=cfg.get("solver", "snapshot_times"),
    )


def build_tests(cfg: RunConfig, grid: Grid) -> TestFunctionSet:
    centers_x = cfg.get("diagnostics", "test_centers")
    if grid.dim == 1:
        centers = np.array([[c] for c in centers_x])
    else:
        y_mid = 0.5 * (grid.lo[1] + grid.hi[1])
        centers = np.array([[c, y_mid] for c in centers_x])
    return default_tests(grid, cfg.get("data", "horizon"), centers=centers,
                         radius=cfg.get("diagnostics", "test_radius"))


def build_plan(cfg: RunConfig, gammas=None) -> SweepPlan:
    grid = build_grid_from_config(cfg)
    return SweepPlan(
        gammas=tuple(gammas) if gammas is not None else cfg.get("sweep", "ladder"),
        grid=grid,
        constitutive=build_constitutive(cfg),
        alpha=cfg.get("stiff", "alpha"),
        data=build_data(cfg, grid),
        solver_config=build_solver_config(cfg),
        tests=build_tests(cfg, grid),
    )
