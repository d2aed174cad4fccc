"""Monitored quantities for a trajectory: norms, explicit L1 bounds, the
Benilan-Aronson margin, pressure-monotonicity margins, graph and
incompressibility residuals and the weak-form residual.

All diagnostics are pure functions of immutable trajectories; recomputation
reproduces values bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import Grid
from .model import Model, ProblemData, boundary_flux_l1, bv_seminorm
from .solver import Trajectory

FloatArray = NDArray[np.float64]


def sigma_weight(t: float, gamma: float, alpha: float, r_phi: float) -> float:
    """Time weight exp(-x)/(1 - exp(-x)) with x = r_phi*t/gamma**(alpha-1).

    Monotone decreasing, blows up as t -> 0+; t <= 0 is rejected.
    """
    if t <= 0.0:
        raise ValueError(f"t must be positive, got {t}")
    x = r_phi * t / gamma ** (alpha - 1.0)
    e = math.exp(-x)
    return e / (1.0 - e)


# ---------------------------------------------------------------------------
# test functions


def _bump(s: FloatArray) -> FloatArray:
    """Quintic bump: 1 at 0, vanishing with two continuous derivatives at |s| = 1."""
    a = np.abs(s)
    inside = a < 1.0
    out = np.zeros_like(a)
    ai = a[inside]
    out[inside] = 1.0 - (10.0 * ai ** 3 - 15.0 * ai ** 4 + 6.0 * ai ** 5)
    return out


def _bump_prime(s: FloatArray) -> FloatArray:
    a = np.abs(s)
    inside = a < 1.0
    out = np.zeros_like(a)
    ai = a[inside]
    out[inside] = -np.sign(s[inside]) * 30.0 * ai ** 2 * (1.0 - ai) ** 2
    return out


@dataclass(frozen=True)
class TestFunctionSet:
    """Compactly supported smooth bumps in space and time.

    Spatial tests are tensor products of quintic bump profiles with the given
    centers (k, d) and isotropic radii (k,); temporal tests are bumps on
    (0, T) given as (center, radius) pairs.
    """

    __test__ = False  # despite the name, not a pytest collectible

    centers: FloatArray
    radii: FloatArray
    temporal: tuple[tuple[float, float], ...]

    @property
    def n_spatial(self) -> int:
        return self.centers.shape[0]

    def validate(self, grid: Grid) -> float:
        """Margin from each support to the boundary; must be >= 2 cells."""
        need = 2.0 * float(np.max(grid.spacing))
        margin = np.inf
        for c, r in zip(self.centers, self.radii):
            for k in range(grid.dim):
                margin = min(margin, c[k] - r - grid.lo[k], grid.hi[k] - (c[k] + r))
        if margin < need:
            raise ValueError(
                f"test-function supports too close to the boundary: margin "
                f"{margin:.4g} < two cells ({need:.4g})")
        return float(margin)

    def spatial_values(self, grid: Grid) -> FloatArray:
        """Values at cell centers, shape (k, n_cells)."""
        pts = grid.cell_centers()
        out = np.ones((self.n_spatial, pts.shape[0]))
        for j in range(self.n_spatial):
            for k in range(grid.dim):
                out[j] *= _bump((pts[:, k] - self.centers[j, k]) / self.radii[j])
        return out

    def spatial_face_gradients(self, grid: Grid) -> FloatArray:
        """Two-point gradients of the cell-sampled tests on interior faces, (k, n_faces)."""
        vals = self.spatial_values(grid)
        f = grid.faces
        return (vals[:, f.right] - vals[:, f.left]) / f.dist

    def zeta(self, m: int, t) -> FloatArray:
        c, r = self.temporal[m]
        return _bump((np.asarray(t, dtype=float) - c) / r)

    def zeta_prime(self, m: int, t) -> FloatArray:
        c, r = self.temporal[m]
        return _bump_prime((np.asarray(t, dtype=float) - c) / r) / r


def default_tests(grid: Grid, horizon: float,
                  centers=None, radius: float = 0.1) -> TestFunctionSet:
    """Bumps in the region swept early by the default run, two temporal bumps."""
    if centers is None:
        frac = np.array([0.15, 0.30, 0.45])
        centers = (grid.lo[None, :]
                   + frac[:, None] * (grid.hi - grid.lo)[None, :])
        if grid.dim == 2:
            centers[:, 1] = 0.5 * (grid.lo[1] + grid.hi[1])
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.full(centers.shape[0], radius)
    temporal = ((0.5 * horizon, 0.45 * horizon), (0.6 * horizon, 0.35 * horizon))
    ts = TestFunctionSet(centers=centers, radii=radii, temporal=temporal)
    ts.validate(grid)
    return ts


# ---------------------------------------------------------------------------
# per-snapshot and per-run quantities


def _l1(field_values: FloatArray, vol: float) -> float:
    return float(np.sum(np.abs(field_values)) * vol)


def _grad_l2_sq(field_values: FloatArray, grid: Grid) -> float:
    f = grid.faces
    g = (field_values[f.right] - field_values[f.left]) / f.dist
    return float(np.sum(g * g * f.dual_volume))


def cell_laplacian(field_values: FloatArray, grid: Grid) -> FloatArray:
    """Standard discrete Laplacian: two-point flux divergence over cell volume.

    Valid on interior cells only; boundary-adjacent entries lack the outer
    flux contribution.
    """
    f = grid.faces
    flux = f.area / f.dist * (field_values[f.right] - field_values[f.left])
    return grid.divergence(flux) / grid.cell_volume


def benilan_aronson_residual(state, grid: Grid, model: Model,
                             pressure_floor: float = 0.0) -> tuple[float, int]:
    """Minimum over interior cells of the one-sided curvature bound margin.

    margin_i = theta(u) lap_h(p) + g**-a u phi(p) + (r_phi/g**a) u sigma(t);
    a negative value beyond discretization error would violate the bound.
    ``pressure_floor`` restricts the minimum to cells with p above the floor:
    inside the under-resolved interface layer the pointwise discrete
    Laplacian carries an O(|grad p|/h) artifact (the kink curvature is a
    positive surface measure that cell sampling misrepresents), so the bound
    is only meaningfully testable on the resolved part of the positivity set.
    Returns (margin, achieving cell index); (+inf, -1) if no cell qualifies.
    """
    t = state.time
    if t <= 0.0:
        raise ValueError("Benilan-Aronson margin undefined at t <= 0")
    if not model.has_comparison_weight():
        raise ValueError(
            "Benilan-Aronson margin needs an active source with a positive "
            "decay rate; the comparison weight is degenerate here")
    u = state.u
    p = u ** model.gamma
    lap = cell_laplacian(p, grid)
    rp = model.r_phi()
    sig = sigma_weight(t, model.gamma, model.alpha, rp)
    expr = (model.constitutive.theta(u) * lap
            + model.source(u)
            + (rp * model.gamma_neg_alpha) * u * sig)
    mask = grid.interior_mask()
    if pressure_floor > 0.0:
        mask = mask & (p >= pressure_floor)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return np.inf, -1
    j = int(np.argmin(expr[idx]))
    return float(expr[idx[j]]), int(idx[j])


def pressure_monotonicity_margin(traj: Trajectory, model: Model,
                                 t_floor_frac: float = 0.05):
    """Finite-stiffness monotonicity margins for pressure and density.

    For each consecutive snapshot pair the pressure margin is
    min_cells[(p1-p0)/dt + (r_phi/g**(a-1)) sigma(t1) p1]; the density margin
    uses the prefactor (r_phi/g**a)/p_M**(1-1/g) on sigma(t1)*p1.

    The aggregate margins skip pairs starting before t_floor_frac * T: the
    comparison weight integrates to a divergent quantity as t -> 0, so the
    bound constrains nothing across the initial layer (same rationale as the
    time floor of the curvature margin). Per-pair values are returned for
    every pair regardless. Returns (margin_p, margin_u, per_pair_p, per_pair_u).
    """
    g, a = model.gamma, model.alpha
    applicable = model.has_comparison_weight()
    rp = model.r_phi()
    pref_u = ((rp / g ** a) / model.p_M ** (1.0 - 1.0 / g)) if applicable else np.nan
    snaps = traj.snapshots
    t_floor = t_floor_frac * snaps[-1].time
    per_pair_p = []
    per_pair_u = []
    floored_p = []
    floored_u = []
    for s0, s1 in zip(snaps[:-1], snaps[1:]):
        dt = s1.time - s0.time
        if dt <= 0.0 or s1.time <= 0.0 or not applicable:
            per_pair_p.append(np.nan)
            per_pair_u.append(np.nan)
            continue
        sig = sigma_weight(s1.time, g, a, rp)
        p1 = s1.u ** g
        mp = monotonicity_pair_margin(s0.u, s1.u, s0.time, s1.time, model)
        mu = float(np.min((s1.u - s0.u) / dt + pref_u * sig * p1))
        per_pair_p.append(mp)
        per_pair_u.append(mu)
        if s0.time >= t_floor:
            floored_p.append(mp)
            floored_u.append(mu)
    pp = np.array(per_pair_p)
    pu = np.array(per_pair_u)
    margin_p = float(min(floored_p)) if floored_p else np.nan
    margin_u = float(min(floored_u)) if floored_u else np.nan
    return margin_p, margin_u, pp, pu


def graph_residual(traj: Trajectory, grid: Grid, gamma: float) -> float:
    """Space-time integral of p*(1-u) by snapshot trapezoidal rule."""
    times = traj.times
    vals = np.array([float(np.sum(s.u ** gamma * (1.0 - s.u)) * grid.cell_volume)
                     for s in traj.snapshots])
    return float(np.trapezoid(vals, times))


def incompressibility_residual(traj: Trajectory, grid: Grid, model: Model,
                               tests: TestFunctionSet):
    """max over spatial tests of the median over time of |sum_f grad_h(p)/h(u) . grad_h(xi)|.

    The face density is the arithmetic average of the adjacent cells; the
    median over snapshot times is robust to the initial transient and to the
    interval where the moving interface crosses a test support.
    """
    tests.validate(grid)
    f = grid.faces
    xi_grad = tests.spatial_face_gradients(grid)        # (k, n_faces)
    facevol = f.area * f.dist
    rows = []
    times = []
    for s in traj.snapshots:
        if s.time <= 0.0:
            continue
        p = s.u ** model.gamma
        gp = (p[f.right] - p[f.left]) / f.dist
        u_face = 0.5 * (s.u[f.right] + s.u[f.left])
        h_face = np.asarray(model.constitutive.h(u_face), dtype=float)
        integrand = gp / h_face * facevol
        rows.append(xi_grad @ integrand)
        times.append(s.time)
    per_test = np.abs(np.array(rows))                   # (n_times, k)
    medians = np.median(per_test, axis=0)
    return float(np.max(medians)), medians


def weak_form_residual(traj: Trajectory, grid: Grid, model: Model,
                       data: ProblemData, tests: TestFunctionSet,
                       include_regularization: bool = False) -> float:
    """Defect of the trajectory in the space-time weak form, max over test pairs.

    For phi = zeta_m(t) xi_k(x), time integration by parts against the
    continuity equation gives
      |int(-u phi_t + theta(u) grad_h p . grad phi) - int_bdry f phi - int source phi|.
    The face value of theta(u) grad_h p is the two-point difference quotient
    of the plain flux potential, which realizes the chain-rule identity
    grad psi(u) = theta(u) grad p exactly on cell data (a face average of
    theta times the pressure jump is ambiguous by O(1) across a sharp front).
    With ``include_regularization`` the flux also carries the g**-a grad_h u
    term the scheme discretizes, isolating pure time-discretization error;
    without it the residual additionally sees the vanishing regularization
    flux, which is the quantity whose decay certifies the limit form.
    """
    tests.validate(grid)
    f = grid.faces
    vol = grid.cell_volume
    xi_vals = tests.spatial_values(grid)                # (k, n_cells)
    xi_grad = tests.spatial_face_gradients(grid)        # (k, n_faces)
    facevol = f.area * f.dist
    xi_bnd = np.zeros((tests.n_spatial, f.n_boundary))
    for j in range(tests.n_spatial):
        w = np.ones(f.n_boundary)
        for k in range(grid.dim):
            w *= _bump((f.bcentroid[:, k] - tests.centers[j, k]) / tests.radii[j])
        xi_bnd[j] = w

    times = traj.times
    n_t = times.size
    mass_term = np.zeros((n_t, tests.n_spatial))        # sum u xi vol
    flux_term = np.zeros((n_t, tests.n_spatial))        # sum theta grad p grad xi
    bnd_term = np.zeros((n_t, tests.n_spatial))         # boundary f xi
    src_term = np.zeros((n_t, tests.n_spatial))         # source xi vol
    for i, s in enumerate(traj.snapshots):
        u = s.u
        psi_vals = model.psi_plain(u)
        flux = (psi_vals[f.right] - psi_vals[f.left]) / f.dist
        integrand = flux * facevol
        if include_regularization:
            gu = (u[f.right] - u[f.left]) / f.dist
            integrand = integrand + model.gamma_neg_alpha * gu * facevol
        mass_term[i] = xi_vals @ (u * vol)
        flux_term[i] = xi_grad @ integrand
        fb = np.asarray(data.boundary_flux(s.time, f.bcentroid), dtype=float)
        bnd_term[i] = xi_bnd @ (fb * f.barea)
        src_term[i] = xi_vals @ (model.source(u) * vol)

    worst = 0.0
    for m in range(len(tests.temporal)):
        z = tests.zeta(m, times)
        zp = tests.zeta_prime(m, times)
        for j in range(tests.n_spatial):
            total = (-np.trapezoid(zp * mass_term[:, j], times)
                     + np.trapezoid(z * flux_term[:, j], times)
                     - np.trapezoid(z * bnd_term[:, j], times)
                     - np.trapezoid(z * src_term[:, j], times))
            worst = max(worst, abs(float(total)))
    return worst


def bv_and_l2_norms(traj: Trajectory, grid: Grid, gamma: float):
    """(|grad u|_L1(QT), |grad p|_L1(QT), |du/dt|_L1, |dp/dt|_L1, |grad p|^2_L2(QT)).

    The time-derivative norms integrate over (1/gamma, T) only, skipping the
    initial layer; snapshot intervals straddling 1/gamma contribute their
    overlap fraction.
    """
    times = traj.times
    T = float(times[-1])
    vol = grid.cell_volume
    bv_u = np.array([bv_seminorm(s.u, grid) for s in traj.snapshots])
    bv_p = np.array([bv_seminorm(s.u ** gamma, grid) for s in traj.snapshots])
    l2p = np.array([_grad_l2_sq(s.u ** gamma, grid) for s in traj.snapshots])
    grad_u_l1 = float(np.trapezoid(bv_u, times))
    grad_p_l1 = float(np.trapezoid(bv_p, times))
    grad_p_l2_sq = float(np.trapezoid(l2p, times))

    t_cut = 1.0 / gamma
    dt_u = 0.0
    dt_p = 0.0
    snaps = traj.snapshots
    for s0, s1 in zip(snaps[:-1], snaps[1:]):
        a, b = s0.time, s1.time
        if b <= a:
            continue
        overlap = max(0.0, min(b, T) - max(a, t_cut)) / (b - a)
        if overlap <= 0.0:
            continue
        dt_u += overlap * float(np.sum(np.abs(s1.u - s0.u)) * vol)
        dt_p += overlap * float(np.sum(np.abs(s1.u ** gamma - s0.u ** gamma)) * vol)
    return grad_u_l1, grad_p_l1, dt_u, dt_p, grad_p_l2_sq


def l1_bound_check(traj: Trajectory, model: Model, data: ProblemData, grid: Grid):
    """Slack of the explicit L1 growth bounds, per snapshot.

    RHS_u = exp(phi(0) T / g**a) (|u0|_L1 + 2 int |flux|); the pressure bound
    carries the extra factor p_M**((g-1)/g). Slack = RHS - LHS must stay above
    a small negative tolerance. Returns (slack_u, slack_p, rhs_u, rhs_p).
    """
    g, a = model.gamma, model.alpha
    T = data.horizon
    phi0 = float(np.asarray(model.constitutive.phi(0.0)))
    u0_l1 = _l1(np.asarray(data.u0, dtype=float), grid.cell_volume)
    flux_l1 = boundary_flux_l1(data, grid)
    rhs_u = math.exp(phi0 * T / g ** a) * (u0_l1 + 2.0 * flux_l1)
    rhs_p = model.p_M ** ((g - 1.0) / g) * rhs_u
    slack_u = np.array([rhs_u - _l1(s.u, grid.cell_volume) for s in traj.snapshots])
    slack_p = np.array([rhs_p - _l1(s.u ** g, grid.cell_volume) for s in traj.snapshots])
    return slack_u, slack_p, rhs_u, rhs_p


def initial_trace_check(traj: Trajectory, u0: FloatArray, grid: Grid,
                        t_max: float | None = None):
    """L1 deviation from the initial data on the early snapshot cluster.

    Returns (times, deviations) for snapshots with 0 < t <= t_max (default:
    the first tenth of the run).
    """
    u0 = np.asarray(u0, dtype=float)
    T = float(traj.times[-1])
    cutoff = 0.1 * T if t_max is None else t_max
    times = []
    devs = []
    for s in traj.snapshots:
        if 0.0 < s.time <= cutoff * (1.0 + 1e-12):
            times.append(s.time)
            devs.append(_l1(s.u - u0, grid.cell_volume))
    return np.array(times), np.array(devs)


# ---------------------------------------------------------------------------
# aggregated report

SERIES_COLUMNS = ("time", "l1_u", "l1_p", "bv_u", "bv_p", "l2_grad_p",
                  "min_u", "max_u", "max_p", "ba_margin", "mono_margin")


@dataclass
class DiagnosticsReport:
    """Per-snapshot scalar table plus per-run scalars for one trajectory."""

    gamma: float
    alpha: float
    series: dict[str, FloatArray]
    scalars: dict[str, float]
    trace_times: FloatArray
    trace_devs: FloatArray
    tolerances: dict[str, float] = field(default_factory=dict)


DEFAULT_TOLERANCES = {
    "max_principle_abs": 1e-10,
    "l1_slack_rel": 1e-8,
    "mono_margin_rel": 1e-8,
    "graph_ratio": 0.05,
    "incomp_ratio": 0.1,
    "uniform_band": 2.0,
    "cauchy_ratio": 0.5,
    "trace_ratio": 0.1,
}


def snapshot_scalars(u: FloatArray, t: float, grid: Grid, model: Model,
                     t_floor: float) -> dict[str, float]:
    """Per-snapshot scalar row (everything except the pairwise mono_margin).

    Shared by report assembly and the stored-field verification path so the
    two always agree bit for bit.
    """
    from .solver import State

    p = u ** model.gamma
    row = {
        "time": t,
        "l1_u": _l1(u, grid.cell_volume),
        "l1_p": _l1(p, grid.cell_volume),
        "bv_u": bv_seminorm(u, grid),
        "bv_p": bv_seminorm(p, grid),
        "l2_grad_p": math.sqrt(_grad_l2_sq(p, grid)),
        "min_u": float(u.min()),
        "max_u": float(u.max()),
        "max_p": float(p.max()),
        "ba_margin": float("nan"),
        "mono_margin": float("nan"),
    }
    if t >= t_floor and t > 0.0 and model.has_comparison_weight():
        row["ba_margin"], _ = benilan_aronson_residual(State(time=t, u=u), grid, model)
    return row


def monotonicity_pair_margin(u_prev: FloatArray, u_new: FloatArray,
                             t_prev: float, t_new: float, model: Model) -> float:
    """Pressure monotonicity margin for one snapshot pair (shared kernel).

    NaN when the source is disabled or degenerate: the bound rests on the
    source comparison and is vacuous without it.
    """
    if not model.has_comparison_weight():
        return float("nan")
    rp = model.r_phi()
    sig = sigma_weight(t_new, model.gamma, model.alpha, rp)
    pref = rp / model.gamma ** (model.alpha - 1.0)
    p_prev = u_prev ** model.gamma
    p_new = u_new ** model.gamma
    return float(np.min((p_new - p_prev) / (t_new - t_prev) + pref * sig * p_new))


def build_report(traj: Trajectory, grid: Grid, model: Model, data: ProblemData,
                 tests: TestFunctionSet | None = None,
                 ba_time_floor_frac: float = 0.05) -> DiagnosticsReport:
    """Compute the full diagnostic set for one finished trajectory."""
    g = model.gamma
    times = traj.times
    T = float(times[-1])
    n_t = times.size

    series = {name: np.full(n_t, np.nan) for name in SERIES_COLUMNS}
    series["time"] = times.copy()
    t_floor = ba_time_floor_frac * T
    for i, s in enumerate(traj.snapshots):
        row = snapshot_scalars(s.u, s.time, grid, model, t_floor)
        for name in SERIES_COLUMNS:
            if name not in ("time", "mono_margin"):
                series[name][i] = row[name]

    mono_p, mono_u, per_pair_p, _ = pressure_monotonicity_margin(traj, model)
    series["mono_margin"][1:] = per_pair_p

    norms = bv_and_l2_norms(traj, grid, g)
    slack_u, slack_p, rhs_u, rhs_p = l1_bound_check(traj, model, data, grid)
    trace_t, trace_d = initial_trace_check(traj, data.u0, grid)

    ba_vals = series["ba_margin"]
    ba_valid = ~np.isnan(ba_vals)
    ba_resolved = np.inf
    if model.has_comparison_weight():
        for s in traj.snapshots:
            if s.time >= t_floor and s.time > 0.0:
                m, _ = benilan_aronson_residual(s, grid, model,
                                                pressure_floor=0.05 * model.p_M)
                ba_resolved = min(ba_resolved, m)
    scalars = {
        "gamma": g,
        "alpha": model.alpha,
        "grad_u_l1": norms[0],
        "grad_p_l1": norms[1],
        "dt_u_l1": norms[2],
        "dt_p_l1": norms[3],
        "grad_p_l2_sq": norms[4],
        "graph_residual": graph_residual(traj, grid, g),
        "l1_slack_u_min": float(slack_u.min()),
        "l1_slack_p_min": float(slack_p.min()),
        "l1_rhs_u": rhs_u,
        "l1_rhs_p": rhs_p,
        "ba_margin_min": float(np.min(ba_vals[ba_valid])) if np.any(ba_valid) else np.nan,
        "ba_margin_resolved_min": float(ba_resolved) if np.isfinite(ba_resolved) else np.nan,
        "mono_margin_p": mono_p,
        "mono_margin_u": mono_u,
        "min_u": float(np.nanmin(series["min_u"])),
        "max_u": float(np.nanmax(series["max_u"])),
        "max_p": float(np.nanmax(series["max_p"])),
    }
    if tests is not None:
        scalars["incomp_residual"], _ = incompressibility_residual(traj, grid, model, tests)
        scalars["weak_form_residual"] = weak_form_residual(traj, grid, model, data, tests)
    return DiagnosticsReport(
        gamma=g, alpha=model.alpha, series=series, scalars=scalars,
        trace_times=trace_t, trace_devs=trace_d,
        tolerances=dict(DEFAULT_TOLERANCES),
    )
