"""Implicit time integration of the stiff-pressure flow model.

Backward Euler on  du/dt = lap(psi_g(u)) + g**(-a) u phi(u**g)  with prescribed
normal flux through the boundary, where psi_g is the regularized flux
potential. Each step is solved by damped Newton; the Newton correction is
obtained from a symmetric positive definite system by factoring the potential
slope out of the Jacobian (tridiagonal direct solve in 1D, Jacobi-
preconditioned conjugate gradients in 2D).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solveh_banded
from scipy.sparse import csr_matrix

from .geometry import Grid
from .model import Model, ProblemData

FloatArray = NDArray[np.float64]


class SolverError(RuntimeError):
    pass


class NewtonDiverged(SolverError):
    """Newton failed to reduce the residual below tolerance within the budget."""


class LinearSolveFailed(SolverError):
    """The inner SPD solve did not converge; carries diagnostics in the message."""


class DtUnderflow(SolverError):
    """dt_min reached with Newton still diverging."""


@dataclass(frozen=True)
class State:
    """Density field at one time instant; pressure is derived, never stored."""

    time: float
    u: FloatArray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        u.flags.writeable = False
        object.__setattr__(self, "u", u)

    def pressure(self, gamma: float) -> FloatArray:
        return self.u ** gamma


@dataclass(frozen=True)
class SolverConfig:
    dt_initial: float = 1e-3
    dt_min: float = 1e-9
    dt_max: float = 2e-2
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    linear_tol: float = 1e-12
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.dt_min <= self.dt_initial <= self.dt_max):
            raise ValueError(
                f"need dt_min <= dt_initial <= dt_max, got "
                f"{self.dt_min}, {self.dt_initial}, {self.dt_max}")


@dataclass
class StepRecord:
    time: float
    dt: float
    newton_iters: int
    residual: float


@dataclass
class LedgerRecord:
    """Per-step mass accounting; ``imbalance`` is the defect of the identity
    mass_new - mass_old = dt*(boundary + source), bounded by the Newton residual."""

    time: float
    dt: float
    mass: float
    boundary_inflow: float
    source_total: float
    imbalance: float


@dataclass
class Trajectory:
    snapshots: list[State] = field(default_factory=list)
    step_log: list[StepRecord] = field(default_factory=list)
    mass_ledger: list[LedgerRecord] = field(default_factory=list)

    @property
    def times(self) -> FloatArray:
        return np.array([s.time for s in self.snapshots])

    def fields(self) -> FloatArray:
        return np.stack([s.u for s in self.snapshots])


def _outflux_scale(u_cells: FloatArray, switch: float) -> FloatArray:
    """Smooth throttle in [0, 1] for outflow through faces on near-vacuum cells."""
    x = np.clip(u_cells / switch, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _outflux_scale_prime(u_cells: FloatArray, switch: float) -> FloatArray:
    x = np.clip(u_cells / switch, 0.0, 1.0)
    return 6.0 * x * (1.0 - x) / switch


def face_flux(state: State, grid: Grid, model: Model,
              data: ProblemData | None = None) -> tuple[FloatArray, FloatArray]:
    """Interior and boundary fluxes for a state.

    Interior face: (psi_g(u_R) - psi_g(u_L))/dist * area, oriented so a
    positive value feeds the lower-index cell. Boundary face: prescribed
    normal flux * area (positive adds mass), throttled on outflow faces whose
    owning cell is near vacuum.
    """
    psi_vals = model.psi_gamma(state.u)
    f = grid.faces
    interior = (psi_vals[f.right] - psi_vals[f.left]) / f.dist * f.area
    if data is None:
        boundary = np.zeros(f.n_boundary)
    else:
        fb = np.asarray(data.boundary_flux(state.time, f.bcentroid), dtype=float)
        boundary = fb * f.barea
        neg = fb < 0.0
        if np.any(neg):
            scale = _outflux_scale(state.u[f.bcell[neg]], data.outflux_switch)
            boundary[neg] *= scale
    return interior, boundary


class _ImplicitStepper:
    """Owns the per-run assembly workspace for one (grid, model, data) triple."""

    def __init__(self, grid: Grid, model: Model, data: ProblemData,
                 config: SolverConfig):
        self.grid = grid
        self.model = model
        self.data = data
        self.config = config
        f = grid.faces
        self.w_face = f.area / f.dist          # two-point transmissibility
        self.vol = grid.cell_volume
        if grid.dim == 1:
            self._lap_diag = np.bincount(f.left, weights=self.w_face,
                                         minlength=grid.n_cells)
            self._lap_diag += np.bincount(f.right, weights=self.w_face,
                                          minlength=grid.n_cells)
        else:
            n = grid.n_cells
            rows = np.concatenate([f.left, f.right, f.left, f.right])
            cols = np.concatenate([f.left, f.right, f.right, f.left])
            vals = np.concatenate([self.w_face, self.w_face,
                                   -self.w_face, -self.w_face])
            self._lap = csr_matrix((vals, (rows, cols)), shape=(n, n))
            self._lap_diag = self._lap.diagonal()

    # -- residual ----------------------------------------------------------

    def boundary_values(self, t: float, u: FloatArray):
        f = self.grid.faces
        fb = np.asarray(self.data.boundary_flux(t, f.bcentroid), dtype=float)
        flux = fb * f.barea
        dflux = np.zeros_like(flux)
        neg = fb < 0.0
        if np.any(neg):
            uc = u[f.bcell[neg]]
            flux[neg] *= _outflux_scale(uc, self.data.outflux_switch)
            dflux[neg] = (fb[neg] * f.barea[neg]
                          * _outflux_scale_prime(uc, self.data.outflux_switch))
        return flux, dflux

    def residual(self, u: FloatArray, u_old: FloatArray, t_new: float,
                 dt: float) -> tuple[FloatArray, FloatArray, FloatArray]:
        f = self.grid.faces
        psi_vals = self.model.psi_gamma(u)
        interior = self.w_face * (psi_vals[f.right] - psi_vals[f.left])
        bflux, _ = self.boundary_values(t_new, u)
        net = self.grid.divergence(interior, bflux)
        src = self.model.source(u)
        res = u - u_old - (dt / self.vol) * net - dt * src
        return res, bflux, src

    def solve_correction(self, u: FloatArray, res: FloatArray, t_new: float,
                         dt: float) -> FloatArray:
        """Newton correction via the SPD-symmetrized system.

        With J = diag(a) + (dt/vol) * L * diag(psi') where L is the two-point
        Laplacian, substituting v = diag(psi') du turns J du = -res into
        [diag(a/psi') + (dt/vol) L] v = -res, which is SPD since a > 0 and
        psi' >= gamma**(-alpha) > 0.
        """
        f = self.grid.faces
        psi_p = self.model.psi_gamma_prime(u)
        _, dflux = self.boundary_values(t_new, u)
        dflux_cell = np.bincount(f.bcell, weights=dflux, minlength=self.grid.n_cells)
        a = 1.0 - dt * self.model.source_prime(u) - (dt / self.vol) * dflux_cell
        if np.any(a <= 0.0):
            raise NewtonDiverged(
                f"implicit diagonal lost positivity (min {a.min():.3e}); "
                f"dt = {dt:.3e} too large for the source stiffness")
        c = a / psi_p
        s = dt / self.vol
        if self.grid.dim == 1:
            n = self.grid.n_cells
            ab = np.zeros((2, n))
            ab[1] = c + s * self._lap_diag
            ab[0, 1:] = -s * self.w_face
            v = solveh_banded(ab, -res)
        else:
            v = self._pcg(c, s, -res)
        return v / psi_p

    def _pcg(self, c: FloatArray, s: float, b: FloatArray) -> FloatArray:
        diag = c + s * self._lap_diag

        def apply(x):
            return c * x + s * (self._lap @ x)

        x = np.zeros_like(b)
        r = b.copy()
        atol = self.config.linear_tol * max(1.0, float(np.linalg.norm(b)))
        z = r / diag
        p = z.copy()
        rz = float(r @ z)
        for _ in range(20 * b.size):
            if np.linalg.norm(r) <= atol:
                return x
            q = apply(p)
            pq = float(p @ q)
            if pq <= 0.0:
                raise LinearSolveFailed(
                    f"conjugate gradients lost positive definiteness (p.q = {pq:.3e})")
            alpha = rz / pq
            x += alpha * p
            r -= alpha * q
            z = r / diag
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise LinearSolveFailed(
            f"conjugate gradients: residual {np.linalg.norm(r):.3e} "
            f"above tolerance {atol:.3e} after {20 * b.size} iterations")

    # -- one backward-Euler step -------------------------------------------

    def step(self, state: State, dt: float) -> tuple[State, StepRecord, LedgerRecord]:
        cfg = self.config
        u_old = state.u
        t_new = state.time + dt
        scale = max(1.0, float(np.max(np.abs(u_old))))
        tol = cfg.newton_tol * scale

        u = u_old.copy()
        res, bflux, src = self.residual(u, u_old, t_new, dt)
        rnorm = float(np.max(np.abs(res)))
        iters = 0
        while rnorm > tol:
            if iters >= cfg.newton_max_iter:
                raise NewtonDiverged(
                    f"residual {rnorm:.3e} > {tol:.3e} after {iters} iterations "
                    f"(t = {state.time:.6g}, dt = {dt:.3e})")
            delta = self.solve_correction(u, res, t_new, dt)
            # never step below zero: zero out descent on pinned cells, cap the
            # step so every component stays nonnegative
            pinned = (u <= 0.0) & (delta < 0.0)
            if np.any(pinned):
                delta = delta.copy()
                delta[pinned] = 0.0
            lam = 1.0
            shrink = delta < 0.0
            if np.any(shrink):
                lam = min(1.0, 0.995 * float(np.min(u[shrink] / -delta[shrink])))
            accepted = False
            for _ in range(30):
                if lam * float(np.max(np.abs(delta))) < 1e-17 * scale:
                    break
                u_try = u + lam * delta
                np.maximum(u_try, 0.0, out=u_try)  # guard rounding at the floor
                res_try, bflux, src = self.residual(u_try, u_old, t_new, dt)
                rnorm_try = float(np.max(np.abs(res_try)))
                if rnorm_try <= (1.0 - 1e-4 * lam) * rnorm:
                    u, res, rnorm = u_try, res_try, rnorm_try
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                raise NewtonDiverged(
                    f"line search stalled at residual {rnorm:.3e} "
                    f"(t = {state.time:.6g}, dt = {dt:.3e})")
            iters += 1

        mass = float(np.sum(u) * self.vol)
        mass_old = float(np.sum(u_old) * self.vol)
        boundary_total = float(np.sum(bflux))
        source_total = float(np.sum(src) * self.vol)
        imbalance = mass - mass_old - dt * (boundary_total + source_total)
        new_state = State(time=t_new, u=u)
        rec = StepRecord(time=t_new, dt=dt, newton_iters=iters, residual=rnorm)
        led = LedgerRecord(time=t_new, dt=dt, mass=mass,
                           boundary_inflow=boundary_total,
                           source_total=source_total, imbalance=imbalance)
        return new_state, rec, led


def step_implicit(state: State, dt: float, grid: Grid, model: Model,
                  config: SolverConfig, data: ProblemData) -> tuple[State, StepRecord]:
    """Single backward-Euler step; raises NewtonDiverged for the caller to halve dt."""
    if not (config.dt_min <= dt <= config.dt_max * (1.0 + 1e-12)):
        raise ValueError(f"dt = {dt} outside [{config.dt_min}, {config.dt_max}]")
    stepper = _ImplicitStepper(grid, model, data, config)
    new_state, rec, _ = stepper.step(state, dt)
    return new_state, rec


def run(initial: State, model: Model, grid: Grid, config: SolverConfig,
        data: ProblemData) -> Trajectory:
    """Integrate to the horizon with adaptive dt.

    dt halves on Newton failure, grows by 1.2x after three consecutive easy
    steps (at most 5 Newton iterations each) and is truncated to land exactly
    on every requested snapshot time and on the horizon.
    """
    T = data.horizon
    targets = sorted({float(t) for t in config.snapshot_times if 0.0 < t <= T} | ({T} if T > 0 else set()))
    traj = Trajectory()
    traj.snapshots.append(initial)
    if T <= initial.time:
        return traj

    stepper = _ImplicitStepper(grid, model, data, config)
    state = initial
    dt = config.dt_initial
    easy_streak = 0
    target_idx = 0
    while target_idx < len(targets):
        target = targets[target_idx]
        remaining = target - state.time
        dt_eff = dt if remaining > dt * (1.0 + 1e-12) else remaining
        try:
            new_state, rec, led = stepper.step(state, dt_eff)
        except NewtonDiverged:
            if dt <= config.dt_min * (1.0 + 1e-12):
                raise DtUnderflow(
                    f"dt_min = {config.dt_min:g} reached at t = {state.time:.6g} "
                    f"with Newton still diverging") from None
            dt = max(dt / 2.0, config.dt_min)
            easy_streak = 0
            continue
        if dt_eff == remaining:
            new_state = State(time=target, u=new_state.u)
        state = new_state
        traj.step_log.append(rec)
        traj.mass_ledger.append(led)
        if state.time >= target:
            traj.snapshots.append(state)
            target_idx += 1
        if rec.newton_iters <= 5:
            easy_streak += 1
            if easy_streak >= 3:
                dt = min(dt * 1.2, config.dt_max)
                easy_streak = 0
        else:
            easy_streak = 0
    return traj
