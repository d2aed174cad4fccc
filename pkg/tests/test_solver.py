import numpy as np
import pytest
from scipy.optimize import brentq

from stiffbl import oracle
from stiffbl.geometry import build_grid
from stiffbl.model import (Model, ProblemData, StiffParams, preset_linear,
                           preset_pme_override)
from stiffbl.solver import (DtUnderflow, SolverConfig, State, face_flux, run,
                            step_implicit)


def zero_flux(t, c):
    return np.zeros(c.shape[0])


def _setup_1d(n=10, gamma=2.0, alpha=2.0, preset=None):
    grid = build_grid(1, [(0.0, 1.0)], [n])
    model = Model(preset or preset_linear(), StiffParams(gamma, alpha))
    return grid, model


def test_face_flux_uniform_state():
    grid, model = _setup_1d()
    data = ProblemData(u0=np.full(10, 0.4), boundary_flux=zero_flux, horizon=1.0)
    interior, boundary = face_flux(State(0.0, np.full(10, 0.4)), grid, model, data)
    assert np.all(interior == 0.0)
    assert np.all(boundary == 0.0)


def test_face_flux_jump_value():
    # theta == 1, gamma=2, alpha=2, h=0.1: (psi_g(1) - psi_g(0))/h = 1.25/0.1
    grid, model = _setup_1d(n=10, preset=preset_pme_override())
    u = np.zeros(10)
    u[5:] = 1.0
    interior, _ = face_flux(State(0.0, u), grid, model)
    assert interior[4] == pytest.approx(12.5, rel=1e-14)
    assert interior[3] == 0.0


def test_face_flux_boundary_product():
    # boundary face area 0.5 comes from a 2D grid with hy = 0.5
    grid = build_grid(2, [(0.0, 1.0), (0.0, 1.5)], [4, 3])
    model = Model(preset_linear(), StiffParams(2.0, 2.0))
    data = ProblemData(u0=np.full(12, 0.5),
                       boundary_flux=lambda t, c: np.full(c.shape[0], 0.3),
                       horizon=1.0)
    _, boundary = face_flux(State(0.0, np.full(12, 0.5)), grid, model, data)
    x_side = grid.faces.baxis == 0
    assert np.allclose(boundary[x_side], 0.3 * 0.5, rtol=1e-14)


def test_step_zero_fixed_point():
    grid, model = _setup_1d()
    data = ProblemData(u0=np.zeros(10), boundary_flux=zero_flux, horizon=1.0)
    cfg = SolverConfig()
    new, rec = step_implicit(State(0.0, np.zeros(10)), 1e-3, grid, model, cfg, data)
    assert np.all(new.u == 0.0)
    assert rec.newton_iters == 0


def test_step_uniform_matches_scalar_backward_euler():
    grid, model = _setup_1d()
    u0, dt = 0.5, 1e-2
    data = ProblemData(u0=np.full(10, u0), boundary_flux=zero_flux, horizon=1.0)
    cfg = SolverConfig()
    new, _ = step_implicit(State(0.0, np.full(10, u0)), dt, grid, model, cfg, data)
    root = brentq(lambda x: x - dt * 0.25 * x * (1.0 - x ** 2) - u0, u0, 1.0,
                  xtol=1e-15)
    assert np.allclose(new.u, root, atol=5e-11)
    # one implicit step tracks the exact flow to second order locally
    exact = oracle.uniform_ode(u0, 2.0, 2.0, 1.0, dt)
    assert abs(float(new.u[0]) - exact) <= 2.0 * dt ** 2


def test_step_equilibrium_preserved():
    gamma, p_M = 5.0, 1.0
    grid, model = _setup_1d(gamma=gamma)
    u_eq = np.full(10, p_M ** (1.0 / gamma))
    data = ProblemData(u0=u_eq, boundary_flux=zero_flux, horizon=1.0)
    new, rec = step_implicit(State(0.0, u_eq), 1e-2, grid, model,
                             SolverConfig(), data)
    assert np.array_equal(new.u, u_eq)
    assert rec.newton_iters == 0


def test_run_horizon_zero():
    grid, model = _setup_1d()
    data = ProblemData(u0=np.full(10, 0.3), boundary_flux=zero_flux, horizon=0.0)
    traj = run(State(0.0, np.full(10, 0.3)), model, grid, SolverConfig(), data)
    assert len(traj.snapshots) == 1
    assert traj.snapshots[0].time == 0.0


@pytest.mark.parametrize("gamma", [4.0, 128.0])
def test_run_maximum_principle_no_flux(gamma):
    grid = build_grid(1, [(0.0, 1.0)], [50])
    model = Model(preset_linear(), StiffParams(gamma, 2.0))
    xs = grid.axis_centers(0)
    u0 = np.where(xs < 0.4, 0.9, 0.1)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=0.5)
    cfg = SolverConfig(snapshot_times=(0.1, 0.25, 0.5))
    traj = run(State(0.0, u0), model, grid, cfg, data)
    bound = 1.0 ** (1.0 / gamma) + 1e-10
    for s in traj.snapshots:
        assert float(s.u.min()) >= 0.0
        assert float(s.u.max()) <= bound


def test_run_mass_ledger_balances():
    grid = build_grid(1, [(0.0, 1.0)], [50])
    model = Model(preset_linear(), StiffParams(8.0, 2.0))
    xs = grid.axis_centers(0)
    u0 = np.where(xs < 0.3, 0.9, 0.0)
    data = ProblemData(u0=u0,
                       boundary_flux=lambda t, c: np.where(c[:, 0] < 0.5, 0.5, -0.05),
                       flux_floor=0.05, horizon=0.3)
    cfg = SolverConfig(snapshot_times=(0.1, 0.3))
    traj = run(State(0.0, u0), model, grid, cfg, data)
    for rec, led in zip(traj.step_log, traj.mass_ledger):
        budget = max(rec.residual, cfg.linear_tol) * grid.total_volume * 2.0
        assert abs(led.imbalance) <= budget


def test_run_snapshot_times_exact():
    grid, model = _setup_1d()
    data = ProblemData(u0=np.full(10, 0.5), boundary_flux=zero_flux, horizon=1.0)
    times = (0.001, 0.01, 0.1, 0.5, 1.0)
    cfg = SolverConfig(snapshot_times=times)
    traj = run(State(0.0, np.full(10, 0.5)), model, grid, cfg, data)
    assert tuple(traj.times) == (0.0,) + times


def test_run_deterministic_1d():
    grid = build_grid(1, [(0.0, 1.0)], [40])
    model = Model(preset_linear(), StiffParams(16.0, 2.0))
    xs = grid.axis_centers(0)
    u0 = np.where(xs < 0.3, 0.9, 0.0)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=0.2)
    cfg = SolverConfig(snapshot_times=(0.1, 0.2))
    t1 = run(State(0.0, u0), model, grid, cfg, data)
    t2 = run(State(0.0, u0), model, grid, cfg, data)
    for a, b in zip(t1.snapshots, t2.snapshots):
        assert np.array_equal(a.u, b.u)


def test_backward_euler_first_order_in_dt():
    grid, model = _setup_1d(n=4)
    u0 = np.full(4, 0.5)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=1.0)
    errs = []
    for dt in (2e-3, 1e-3):
        cfg = SolverConfig(dt_initial=dt, dt_min=dt, dt_max=dt,
                           snapshot_times=(1.0,))
        traj = run(State(0.0, u0), model, grid, cfg, data)
        exact = oracle.uniform_ode(0.5, 2.0, 2.0, 1.0, 1.0)
        errs.append(abs(float(traj.snapshots[-1].u[0]) - exact))
    order = np.log2(errs[0] / errs[1])
    assert order >= 0.9


def test_dt_underflow_raises():
    grid, model = _setup_1d()
    u0 = np.full(10, 0.5)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=1.0)
    cfg = SolverConfig(dt_initial=1e-3, dt_min=1e-3, dt_max=1e-2,
                       newton_max_iter=0, snapshot_times=(1.0,))
    with pytest.raises(DtUnderflow):
        run(State(0.0, u0), model, grid, cfg, data)


def test_outflux_from_dry_boundary_is_throttled():
    # prescribed outflow on a vacuum boundary must not break nonnegativity
    grid = build_grid(1, [(0.0, 1.0)], [50])
    model = Model(preset_linear(), StiffParams(8.0, 2.0))
    xs = grid.axis_centers(0)
    u0 = np.where(xs < 0.3, 0.9, 0.0)
    data = ProblemData(u0=u0,
                       boundary_flux=lambda t, c: np.full(c.shape[0], -0.05),
                       flux_floor=0.05, horizon=0.2)
    cfg = SolverConfig(snapshot_times=(0.2,))
    traj = run(State(0.0, u0), model, grid, cfg, data)
    for s in traj.snapshots:
        assert float(s.u.min()) >= 0.0
    # the wet boundary still discharges close to the nominal rate
    assert traj.mass_ledger[0].boundary_inflow == pytest.approx(-0.05, rel=1e-6)


def test_run_2d_conservation_and_bounds():
    grid = build_grid(2, [(0.0, 1.0), (0.0, 1.0)], [12, 12])
    model = Model(preset_linear(), StiffParams(8.0, 2.0))
    c = grid.cell_centers()
    u0 = np.where((c[:, 0] - 0.4) ** 2 + (c[:, 1] - 0.5) ** 2 < 0.09, 0.9, 0.0)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=0.05)
    cfg = SolverConfig(dt_initial=5e-4, snapshot_times=(0.02, 0.05))
    traj = run(State(0.0, u0), model, grid, cfg, data)
    for s in traj.snapshots:
        assert float(s.u.min()) >= 0.0
        assert float(s.u.max()) <= 1.0 + 1e-10
    for rec, led in zip(traj.step_log, traj.mass_ledger):
        budget = max(rec.residual, cfg.linear_tol * 10) * grid.total_volume * 2.0
        assert abs(led.imbalance) <= budget


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt_initial=1e-3, dt_min=1e-2, dt_max=1e-1)
