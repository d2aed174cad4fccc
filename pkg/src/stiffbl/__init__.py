"""Finite-volume solver for compressible two-phase porous-media flow with a
stiff power-law pressure, plus the stiffness-sweep harness that studies its
incompressible free-boundary limit."""

from .geometry import Grid, FaceSet, build_grid, discrete_gradient
from .model import (Constitutive, Model, ProblemData, StiffParams,
                    beta, make_preset, preset_fractional_flow, preset_linear,
                    preset_pme_override, psi, psi_regularized, r_phi,
                    stiff_pressure, theta, validate_constitutive, validate_data)
from .solver import (DtUnderflow, LinearSolveFailed, NewtonDiverged,
                     SolverConfig, State, Trajectory, face_flux, run,
                     step_implicit)
from .diagnostics import (DiagnosticsReport, TestFunctionSet,
                          benilan_aronson_residual, build_report,
                          bv_and_l2_norms, default_tests, graph_residual,
                          incompressibility_residual, initial_trace_check,
                          l1_bound_check, pressure_monotonicity_margin,
                          sigma_weight, weak_form_residual)
from .sweep import (SweepMember, SweepPlan, SweepReport, cauchy_differences,
                    extract_free_boundary, monotone_region_check, run_sweep)
from .config import (RunConfig, build_plan, default_config, parse_config)
from .io import emit_outputs, verify_outputs
from . import oracle

__version__ = "0.1.0"
