import numpy as np
import pytest

from stiffbl.config import build_plan, default_config, parse_config
from stiffbl.model import Model, ProblemData, StiffParams, preset_linear
from stiffbl.solver import SolverConfig, State, run
from stiffbl.sweep import run_sweep

LADDER = (4.0, 8.0, 16.0, 32.0, 64.0, 128.0)


@pytest.fixture(scope="session")
def default_cfg():
    return default_config()


@pytest.fixture(scope="session")
def default_plan(default_cfg):
    return build_plan(default_cfg)


@pytest.fixture(scope="session")
def default_sweep(default_plan):
    """The default gamma ladder on the default data, shared across tests."""
    return run_sweep(default_plan)


@pytest.fixture(scope="session")
def refined_plan():
    return build_plan(parse_config("[grid]\nnx = 400\n"))


@pytest.fixture(scope="session")
def refined_sweep(refined_plan):
    """Same run on a 2x refined grid, used to measure discretization error."""
    return run_sweep(refined_plan)


def zero_flux(t, centroids):
    return np.zeros(centroids.shape[0])


@pytest.fixture(scope="session")
def uniform_run():
    """Spatially uniform relaxation toward the pressure ceiling (coarse dt)."""
    from stiffbl.geometry import build_grid

    grid = build_grid(1, [(0.0, 1.0)], [8])
    model = Model(preset_linear(), StiffParams(gamma=2.0, alpha=2.0))
    u0 = np.full(grid.n_cells, 0.5)
    data = ProblemData(u0=u0, boundary_flux=zero_flux, horizon=5.0)
    sc = SolverConfig(dt_initial=1e-3, dt_min=1e-3, dt_max=1e-3,
                      snapshot_times=(0.5, 1.0, 2.0, 5.0))
    traj = run(State(0.0, u0), model, grid, sc, data)
    return grid, model, data, traj
