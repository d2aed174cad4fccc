import math

import numpy as np
import pytest

from stiffbl.geometry import build_grid
from stiffbl.model import (Constitutive, ConstitutiveError, DataValidationError,
                           Model, ProblemData, StiffParams, beta, bv_seminorm,
                           make_preset, preset_fractional_flow, preset_linear,
                           preset_pme_override, psi, psi_regularized, r_phi,
                           stiff_pressure, theta, validate_constitutive,
                           validate_data)


def test_theta_linear_preset():
    c = preset_linear()
    assert theta(0.5, c) == pytest.approx(0.5, abs=0)
    assert theta(0.0, c) == 0.0


def test_theta_fractional_flow():
    c = preset_fractional_flow()
    # (0.25/0.5) * (0.25 + 0.5) evaluated from the closed forms
    assert theta(0.5, c) == pytest.approx(0.375, abs=1e-15)
    assert theta(0.0, c) == 0.0


def test_stiff_pressure():
    assert stiff_pressure(1.0, 7.3) == 1.0
    assert stiff_pressure(0.5, 3.0) == pytest.approx(0.125, abs=0)
    p_M, g = 0.7, 5.0
    assert stiff_pressure(p_M ** (1.0 / g), g) == pytest.approx(p_M, rel=1e-14)


def test_psi_closed_forms():
    lin = preset_linear()
    # theta(z) = z gives gamma*z**(gamma+1)/(gamma+1)
    assert psi(1.0, 2.0, lin) == pytest.approx(2.0 / 3.0, rel=1e-15)
    pme = preset_pme_override()
    assert psi(0.5, 2.0, pme) == pytest.approx(0.25, abs=0)
    assert psi(0.0, 4.0, lin) == 0.0


def test_psi_quadrature_matches_closed_form():
    lin = preset_linear()
    for z in (0.2, 0.5, 0.9, 1.0):
        for g in (1.5, 2.0, 8.0, 64.0):
            q = psi(z, g, lin, method="quadrature")
            c = psi(z, g, lin, method="closed")
            assert abs(q - c) <= 1e-10


def test_psi_strictly_increasing():
    rng = np.random.default_rng(3)
    for c in (preset_linear(), preset_fractional_flow()):
        for g in (2.0, 16.0):
            pairs = rng.uniform(1e-3, 1.05, size=(40, 2))
            for a, b in pairs:
                lo, hi = min(a, b), max(a, b)
                if hi - lo < 1e-9:
                    continue
                assert psi(hi, g, c) > psi(lo, g, c)


def test_psi_regularized():
    pme = preset_pme_override()
    assert psi_regularized(0.0, 2.0, 2.0, pme) == 0.0
    assert psi_regularized(1.0, 2.0, 2.0, pme) == pytest.approx(1.25, abs=0)


def test_psi_regularized_slope_floor():
    c = preset_linear()
    for g, a in ((2.0, 2.0), (32.0, 1.5)):
        model = Model(c, StiffParams(g, a))
        # slope at zero is exactly the regularization floor
        assert model.psi_gamma_prime(np.array([0.0]))[0] == g ** (-a)
        zs = np.linspace(0.0, 1.1, 500)
        assert np.all(model.psi_gamma_prime(zs) >= g ** (-a) * (1.0 - 1e-15))


def test_psi_table_matches_quadrature():
    c = preset_fractional_flow()
    model = Model(c, StiffParams(8.0, 2.0))
    zs = np.linspace(0.0, 1.0, 23)
    table_vals = model.psi_plain(zs)
    quad_vals = psi(zs, 8.0, c, method="quadrature")
    assert np.max(np.abs(table_vals - quad_vals)) <= 1e-10


def test_r_phi_linear_profile():
    c = preset_linear(p_M=1.0)
    assert r_phi(c) == pytest.approx(1.0, rel=1e-12)
    c2 = preset_linear(p_M=1.0, phi_scale=2.0)
    assert r_phi(c2) == pytest.approx(2.0, rel=1e-12)


def _with_phi(phi, dphi, p_M=1.0):
    base = preset_linear(p_M=p_M)
    return Constitutive(name="custom", g=base.g, h=base.h, phi=phi, dphi=dphi,
                        p_M=p_M, h_floor=1.0)


def test_r_phi_degenerate_cubic_rejected():
    # phi = (1-p)**3: phi - phi'*p = (1-p)**2 (1+2p) has minimum 0 at p = 1
    c = _with_phi(lambda p: (1.0 - np.asarray(p)) ** 3,
                  lambda p: -3.0 * (1.0 - np.asarray(p)) ** 2)
    assert r_phi(c) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ConstitutiveError):
        validate_constitutive(c)


def test_r_phi_refinement_invariance():
    c = _with_phi(lambda p: np.exp(-np.asarray(p)) - math.exp(-1.0),
                  lambda p: -np.exp(-np.asarray(p)))
    from stiffbl.model import _sampled_min
    fn = lambda p: np.asarray(c.phi(p)) - np.asarray(c.dphi(p)) * p
    coarse = _sampled_min(fn, 0.0, 1.0, n_samples=10001)
    fine = _sampled_min(fn, 0.0, 1.0, n_samples=40001)
    assert abs(coarse - fine) <= 1e-8


def test_beta_values():
    assert beta(preset_linear()) == pytest.approx(1.0, abs=1e-12)
    assert beta(preset_linear(phi_scale=2.0)) == pytest.approx(2.0, abs=1e-12)
    c = _with_phi(lambda p: np.exp(-np.asarray(p)) - math.exp(-1.0),
                  lambda p: -np.exp(-np.asarray(p)))
    assert beta(c) == pytest.approx(1.0, rel=1e-10)


def test_beta_rejects_nondecreasing_phi():
    c = _with_phi(lambda p: np.zeros_like(np.asarray(p, dtype=float)),
                  lambda p: np.zeros_like(np.asarray(p, dtype=float)))
    with pytest.raises(ConstitutiveError):
        beta(c)


def test_stiff_params_bounds():
    StiffParams(1.0001, 1.0001)
    with pytest.raises(ValueError, match="gamma"):
        StiffParams(1.0, 2.0)
    with pytest.raises(ValueError, match="alpha"):
        StiffParams(2.0, 1.0)


def test_validate_constitutive_presets():
    for c in (preset_linear(), preset_fractional_flow()):
        rep = validate_constitutive(c)
        assert rep.ok
        assert rep.scalars["r_phi"] > 0
    rep = validate_constitutive(preset_pme_override())
    assert rep.warnings  # bypass is announced


def test_make_preset_unknown():
    with pytest.raises(ConstitutiveError):
        make_preset("nope")


def _grid():
    return build_grid(1, [(0.0, 1.0)], [10])


def _zero_flux(t, c):
    return np.zeros(c.shape[0])


def test_validate_data_zero():
    g = _grid()
    data = ProblemData(u0=np.zeros(10), boundary_flux=_zero_flux, horizon=1.0)
    rep = validate_data(data, g, StiffParams(2.0, 2.0), preset_linear())
    assert rep.ok
    assert rep.scalars["u0_bv"] == 0.0
    assert rep.scalars["flux_l1"] == 0.0


def test_validate_data_pressure_boundary_case():
    g = _grid()
    gamma = 3.0
    u0 = np.full(10, 1.0 ** (1.0 / gamma))  # initial pressure exactly p_M
    data = ProblemData(u0=u0, boundary_flux=_zero_flux, horizon=1.0)
    rep = validate_data(data, g, StiffParams(gamma, 2.0), preset_linear())
    assert rep.ok


def test_validate_data_rejects_negative_density():
    g = _grid()
    u0 = np.zeros(10)
    u0[3] = -1e-9
    data = ProblemData(u0=u0, boundary_flux=_zero_flux, horizon=1.0)
    with pytest.raises(DataValidationError, match="hypothesis B"):
        validate_data(data, g, StiffParams(2.0, 2.0), preset_linear())


def test_validate_data_rejects_pressure_overflow():
    g = _grid()
    data = ProblemData(u0=np.full(10, 1.2), boundary_flux=_zero_flux, horizon=1.0)
    with pytest.raises(DataValidationError, match="p_M"):
        validate_data(data, g, StiffParams(4.0, 2.0), preset_linear())


def test_validate_data_flux_floor():
    g = _grid()
    data = ProblemData(u0=np.zeros(10), boundary_flux=_zero_flux,
                       flux_floor=0.05, horizon=1.0)
    with pytest.raises(DataValidationError, match="floor"):
        validate_data(data, g, StiffParams(2.0, 2.0), preset_linear())
    # floor 0 only warns
    data0 = ProblemData(u0=np.zeros(10), boundary_flux=_zero_flux, horizon=1.0)
    rep = validate_data(data0, g, StiffParams(2.0, 2.0), preset_linear())
    assert any("flux_floor" in w for w in rep.warnings)


def test_bv_seminorm_exact_on_affine():
    g = _grid()
    assert bv_seminorm(g.axis_centers(0), g) == pytest.approx(1.0, rel=1e-14)
    assert bv_seminorm(np.full(10, 2.0), g) == 0.0
