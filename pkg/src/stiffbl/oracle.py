"""Closed-form reference solutions used to validate the solver and diagnostics.

Each oracle ships with a ``self_verify_*`` routine that substitutes the
closed form back into its governing equation; no oracle value is trusted by a
test before its self-check passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class OracleCase:
    """A reference solution bundled with its parameters and self-check.

    ``evaluate(t, x)`` returns the solution value (x is ignored by the
    spatially uniform cases); ``self_verify()`` substitutes the closed form
    into its governing equation and raises on failure.
    """

    kind: str
    parameters: dict = field(default_factory=dict)
    evaluate: Callable = None
    self_verify: Callable = None


def uniform_ode(u0: float, gamma: float, alpha: float, p_M: float, t,
                phi=None, dphi=None):
    """Spatially uniform density under the rescaled source, no boundary flux.

    For the default linear source profile phi(p) = p_M - p the solution of
    du/dt = gamma**(-alpha) * u * (p_M - u**gamma) has the closed form

        u(t) = [1/p_M + (u0**(-gamma) - 1/p_M) * exp(-p_M * gamma**(1-alpha) * t)]**(-1/gamma)

    (substituting y = u**(-gamma) makes the equation linear). A non-default
    ``phi`` falls back to high-accuracy adaptive integration.
    """
    if u0 <= 0.0:
        raise ValueError(f"u0 must be positive, got {u0}")
    t_arr = np.asarray(t, dtype=float)
    if phi is None:
        decay = np.exp(-p_M * gamma ** (1.0 - alpha) * t_arr)
        y = 1.0 / p_M + (u0 ** (-gamma) - 1.0 / p_M) * decay
        out = y ** (-1.0 / gamma)
        return float(out) if np.isscalar(t) else out

    def rhs(_t, u):
        return gamma ** (-alpha) * u * phi(u ** gamma)

    t_end = float(np.max(t_arr))
    sol = solve_ivp(rhs, (0.0, max(t_end, 1e-30)), [u0], rtol=1e-12, atol=1e-14,
                    dense_output=True)
    if not sol.success:
        raise RuntimeError(f"fallback integration failed: {sol.message}")
    out = sol.sol(np.atleast_1d(t_arr))[0]
    return float(out[0]) if np.isscalar(t) else out.reshape(t_arr.shape)


def self_verify_uniform_ode(gamma: float = 2.0, alpha: float = 2.0,
                            p_M: float = 1.0, u0: float = 0.5,
                            t_max: float = 5.0, rtol: float = 1e-8) -> float:
    """Residual of the closed form in its ODE, plus agreement with the integrator."""
    ts = np.linspace(0.05, t_max, 40)
    dt = 1e-6
    u_mid = uniform_ode(u0, gamma, alpha, p_M, ts)
    dudt = (uniform_ode(u0, gamma, alpha, p_M, ts + dt)
            - uniform_ode(u0, gamma, alpha, p_M, ts - dt)) / (2.0 * dt)
    rhs = gamma ** (-alpha) * u_mid * (p_M - u_mid ** gamma)
    resid = float(np.max(np.abs(dudt - rhs) / np.maximum(np.abs(rhs), 1e-12)))
    u_int = uniform_ode(u0, gamma, alpha, p_M, ts, phi=lambda p: p_M - p)
    agree = float(np.max(np.abs(u_int - u_mid)))
    if resid > 100.0 * rtol or agree > rtol:
        raise AssertionError(
            f"uniform-ode oracle failed self-check: ode residual {resid:.2e}, "
            f"integrator mismatch {agree:.2e}")
    return max(resid, agree)


def ricatti_w(t, gamma: float, alpha: float, r_phi: float):
    """Comparison solution W(t) = -(r/g**a) * E/(1-E) with E = exp(-r*t/g**(a-1)).

    Blows up to -inf as t -> 0+ and satisfies dW/dt = gamma*W**2 - (r/gamma**(alpha-1))*W.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0):
        raise ValueError("t must be positive")
    x = r_phi * t_arr / gamma ** (alpha - 1.0)
    e = np.exp(-x)
    out = -(r_phi / gamma ** alpha) * e / (1.0 - e)
    return float(out) if np.isscalar(t) else out


def self_verify_ricatti(gamma: float = 2.0, alpha: float = 2.0,
                        r_phi: float = 1.0, rtol: float = 1e-8) -> float:
    ts = np.linspace(0.1, 5.0, 25)
    dt = 1e-6
    w = ricatti_w(ts, gamma, alpha, r_phi)
    dwdt = (ricatti_w(ts + dt, gamma, alpha, r_phi)
            - ricatti_w(ts - dt, gamma, alpha, r_phi)) / (2.0 * dt)
    rhs = gamma * w ** 2 - (r_phi / gamma ** (alpha - 1.0)) * w
    resid = float(np.max(np.abs(dwdt - rhs) / np.maximum(np.abs(rhs), 1e-14)))
    if resid > rtol:
        raise AssertionError(f"ricatti oracle failed self-check: residual {resid:.2e}")
    return resid


def barenblatt_profile_constant(mass: float, m: float, dim: int) -> float:
    """Profile constant giving the requested total mass (1D, quadratic exponent 1/(m-1)).

    Valid for m = 2, dim = 1 where the profile is C - k x^2 on its support;
    total mass is (4/3) * C * sqrt(C/k).
    """
    if dim != 1 or abs(m - 2.0) > 1e-12:
        raise NotImplementedError("mass inversion implemented for m=2, dim=1 only")
    b = 1.0 / (dim * (m - 1.0) + 2.0)
    k = (m - 1.0) * b / (2.0 * m)
    # mass = (4/3) * C**1.5 / sqrt(k)
    return float((0.75 * mass * np.sqrt(k)) ** (2.0 / 3.0))


def barenblatt(m: float, dim: int, mass_constant: float, t, x):
    """Self-similar source solution of du/dt = lap(u**m).

    u(t, x) = t**(-d*b) * max(0, C - k*|x|**2 * t**(-2b))**(1/(m-1)),
    b = 1/(d(m-1)+2), k = (m-1)*b/(2m); ``mass_constant`` is C.
    """
    if m <= 1.0:
        raise ValueError(f"m must exceed 1, got {m}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0):
        raise ValueError("t must be positive")
    x_arr = np.asarray(x, dtype=float)
    r2 = x_arr ** 2 if dim == 1 else np.sum(x_arr ** 2, axis=-1)
    b = 1.0 / (dim * (m - 1.0) + 2.0)
    k = (m - 1.0) * b / (2.0 * m)
    core = np.maximum(0.0, mass_constant - k * r2 * t_arr ** (-2.0 * b))
    out = t_arr ** (-dim * b) * core ** (1.0 / (m - 1.0))
    return float(out) if (np.isscalar(t) and np.isscalar(x)) else out


def barenblatt_support_radius(m: float, dim: int, mass_constant: float,
                              t: float) -> float:
    b = 1.0 / (dim * (m - 1.0) + 2.0)
    k = (m - 1.0) * b / (2.0 * m)
    return float(np.sqrt(mass_constant / k) * t ** b)


def self_verify_barenblatt(m: float = 2.0, dim: int = 1,
                           mass_constant: float = 0.3) -> dict:
    """Check mass invariance by quadrature and the PDE residual inside the support.

    The PDE residual du/dt - lap(u**m) is evaluated with centered differences
    at points away from the moving interface, where the profile is smooth; the
    discrete residual there must shrink like the square of the stencil width.
    """
    if dim != 1:
        raise NotImplementedError("self-check implemented for dim=1")
    out = {}

    # mass invariance across two times
    r = barenblatt_support_radius(m, dim, mass_constant, 1.0) * 1.1
    xs = np.linspace(-r, r, 200001)
    masses = []
    for t in (0.5, 1.0):
        u = barenblatt(m, dim, mass_constant, t, xs)
        masses.append(np.trapezoid(u, xs))
    drift = abs(masses[1] - masses[0]) / masses[0]
    out["mass_drift"] = float(drift)
    if drift > 1e-6:
        raise AssertionError(f"barenblatt mass drift {drift:.2e} exceeds 1e-6")

    # interior PDE residual at two stencil widths
    t0 = 0.75
    r_in = 0.6 * barenblatt_support_radius(m, dim, mass_constant, t0)
    pts = np.linspace(-r_in, r_in, 41)
    resids = []
    for hh in (1e-3, 5e-4):
        dt = hh
        u_t = (barenblatt(m, dim, mass_constant, t0 + dt, pts)
               - barenblatt(m, dim, mass_constant, t0 - dt, pts)) / (2.0 * dt)
        um = lambda xx: barenblatt(m, dim, mass_constant, t0, xx) ** m
        lap = (um(pts + hh) - 2.0 * um(pts) + um(pts - hh)) / hh ** 2
        resids.append(float(np.max(np.abs(u_t - lap))))
    out["pde_residual"] = resids[-1]
    out["pde_residual_order"] = float(np.log2(resids[0] / max(resids[1], 1e-300)))
    if resids[-1] > 1e-4 or out["pde_residual_order"] < 1.5:
        raise AssertionError(
            f"barenblatt PDE self-check failed: residuals {resids}, "
            f"order {out['pde_residual_order']:.2f}")
    return out


def uniform_ode_case(u0: float, gamma: float, alpha: float,
                     p_M: float) -> OracleCase:
    return OracleCase(
        kind="uniform-ode",
        parameters={"u0": u0, "gamma": gamma, "alpha": alpha, "p_M": p_M},
        evaluate=lambda t, x=None: uniform_ode(u0, gamma, alpha, p_M, t),
        self_verify=lambda: self_verify_uniform_ode(gamma, alpha, p_M, u0),
    )


def ricatti_case(gamma: float, alpha: float, r_phi: float) -> OracleCase:
    return OracleCase(
        kind="ricatti",
        parameters={"gamma": gamma, "alpha": alpha, "r_phi": r_phi},
        evaluate=lambda t, x=None: ricatti_w(t, gamma, alpha, r_phi),
        self_verify=lambda: self_verify_ricatti(gamma, alpha, r_phi),
    )


def barenblatt_case(m: float, dim: int, mass_constant: float) -> OracleCase:
    return OracleCase(
        kind="barenblatt",
        parameters={"m": m, "dim": dim, "mass_constant": mass_constant},
        evaluate=lambda t, x: barenblatt(m, dim, mass_constant, t, x),
        self_verify=lambda: self_verify_barenblatt(m, dim, mass_constant),
    )


def run_all_self_checks() -> dict:
    """Run every oracle self-verification; raises on the first failure."""
    return {
        "uniform_ode": self_verify_uniform_ode(),
        "ricatti": self_verify_ricatti(),
        "barenblatt": self_verify_barenblatt(),
    }
