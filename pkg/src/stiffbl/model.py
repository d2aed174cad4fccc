"""Constitutive functions, stiff parameters and data validation.

A :class:`Constitutive` bundles the mobility pair (g, h), the pressure source
profile Phi with its derivative, the homeostatic pressure p_M and the
admissibility metadata. :class:`Model` specializes a bundle to one (gamma,
alpha) pair and provides the vectorized flux potential used by the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad

from .geometry import Grid

FloatArray = NDArray[np.float64]


class ConstitutiveError(ValueError):
    """A constitutive bundle violates the admissibility assumptions (hypothesis A)."""


class DataValidationError(ValueError):
    """Initial or boundary data violate the data assumptions (hypothesis B)."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature for the flux potential did not reach tolerance."""


@dataclass(frozen=True)
class Constitutive:
    """Mobility pair, source profile and admissibility metadata.

    ``g`` and ``h`` act elementwise on density; ``phi``/``dphi`` on pressure.
    ``delta`` is the declared half-width of the neighborhood of 1 on which g
    must be non-decreasing. ``psi_closed(z, gamma)``, when present, is the
    closed form of the flux potential. ``source_enabled=False`` together with
    ``theta_is_one=True`` marks the test-only pure-diffusion override, which
    intentionally bypasses the g(0)=0 requirement.
    """

    name: str
    g: Callable[[FloatArray], FloatArray]
    h: Callable[[FloatArray], FloatArray]
    phi: Callable[[FloatArray], FloatArray]
    dphi: Callable[[FloatArray], FloatArray]
    p_M: float = 1.0
    h_floor: float = 1.0
    delta: float = 0.1
    psi_closed: Callable[[FloatArray, float], FloatArray] | None = None
    source_enabled: bool = True
    theta_is_one: bool = False

    def theta(self, z):
        """Mobility ratio g/h; identically 1 in the diffusion-override mode."""
        z = np.asarray(z, dtype=float)
        if self.theta_is_one:
            return np.ones_like(z)
        return self.g(z) / self.h(z)


def theta(z, constitutive: Constitutive):
    """Mobility ratio at density z (0 at z = 0 for admissible bundles)."""
    return constitutive.theta(z)


def stiff_pressure(u, gamma: float):
    """Power-law pressure u**gamma."""
    return np.asarray(u, dtype=float) ** gamma


# ---------------------------------------------------------------------------
# presets


def _linear_psi(z, gamma):
    z = np.asarray(z, dtype=float)
    return gamma * z ** (gamma + 1.0) / (gamma + 1.0)


def _pme_psi(z, gamma):
    return np.asarray(z, dtype=float) ** gamma


def preset_linear(p_M: float = 1.0, phi_scale: float = 1.0) -> Constitutive:
    """g(z) = z, h = 1, so the mobility ratio is z; Phi = scale*(p_M - p)."""
    return Constitutive(
        name="linear",
        g=lambda z: np.asarray(z, dtype=float),
        h=lambda z: np.ones_like(np.asarray(z, dtype=float)),
        phi=lambda p: phi_scale * (p_M - np.asarray(p, dtype=float)),
        dphi=lambda p: np.full_like(np.asarray(p, dtype=float), -phi_scale),
        p_M=p_M,
        h_floor=1.0,
        psi_closed=_linear_psi,
    )


def preset_fractional_flow(p_M: float = 1.0, phi_scale: float = 1.0) -> Constitutive:
    """S-shaped fractional-flow mobilities, saturated (held constant) above z = 1.

    The clamp keeps g non-decreasing on a two-sided neighborhood of 1 and
    keeps g/h non-decreasing; densities stay at or below p_M**(1/gamma) <= 1
    for p_M <= 1, so the clamp is inactive on admissible states.
    """

    def g(z):
        zc = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        return zc ** 2 / (zc ** 2 + (1.0 - zc) ** 2)

    def h(z):
        zc = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
        return 1.0 / (zc ** 2 + 2.0 * (1.0 - zc) ** 2)

    return Constitutive(
        name="fractional-flow",
        g=g,
        h=h,
        phi=lambda p: phi_scale * (p_M - np.asarray(p, dtype=float)),
        dphi=lambda p: np.full_like(np.asarray(p, dtype=float), -phi_scale),
        p_M=p_M,
        h_floor=0.5,
    )


def preset_pme_override() -> Constitutive:
    """Test-only pure-diffusion mode: mobility ratio identically 1, no source.

    Bypasses the g(0) = 0 admissibility requirement (g = h = 1); used solely
    for validating the solver against the self-similar diffusion profile.
    """
    return Constitutive(
        name="pme-override",
        g=lambda z: np.ones_like(np.asarray(z, dtype=float)),
        h=lambda z: np.ones_like(np.asarray(z, dtype=float)),
        phi=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        dphi=lambda p: np.zeros_like(np.asarray(p, dtype=float)),
        p_M=1.0,
        h_floor=1.0,
        psi_closed=_pme_psi,
        source_enabled=False,
        theta_is_one=True,
    )


_PRESETS = {
    "linear": preset_linear,
    "fractional-flow": preset_fractional_flow,
    "pme-override": lambda **kw: preset_pme_override(),
}


def make_preset(name: str, **kwargs) -> Constitutive:
    if name not in _PRESETS:
        raise ConstitutiveError(f"unknown preset {name!r}; known: {sorted(_PRESETS)}")
    return _PRESETS[name](**kwargs)


# ---------------------------------------------------------------------------
# flux potential


def psi(z, gamma: float, constitutive: Constitutive, tol: float = 1e-12,
        method: str = "auto"):
    """Flux potential gamma * int_0^z theta(s) s^(gamma-1) ds.

    Uses the preset closed form when available; otherwise adaptive quadrature
    after the substitution t = s**gamma, which removes the stiff endpoint
    weight:  psi(z) = int_0^{z**gamma} theta(t**(1/gamma)) dt.
    """
    if method not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    zarr = np.asarray(z, dtype=float)
    if method == "closed" or (method == "auto" and constitutive.psi_closed is not None):
        if constitutive.psi_closed is None:
            raise ValueError(f"preset {constitutive.name!r} has no closed form")
        out = constitutive.psi_closed(zarr, gamma)
        return float(out) if np.isscalar(z) else out

    def one(zv: float) -> float:
        if zv <= 0.0:
            return 0.0
        p_top = zv ** gamma
        val, err = quad(lambda t: float(constitutive.theta(t ** (1.0 / gamma))),
                        0.0, p_top, epsabs=tol, epsrel=tol, limit=200)
        if err > 10.0 * max(tol, tol * abs(val)):
            raise QuadratureError(
                f"flux-potential quadrature at z={zv:g}, gamma={gamma:g}: "
                f"achieved error bound {err:.3e} exceeds tolerance {tol:.1e}")
        return val

    if np.isscalar(z):
        return one(float(z))
    return np.array([one(float(v)) for v in zarr.ravel()]).reshape(zarr.shape)


def psi_regularized(z, gamma: float, alpha: float, constitutive: Constitutive,
                    tol: float = 1e-12):
    """psi(z) + z/gamma**alpha; strictly increasing with slope >= gamma**(-alpha)."""
    zarr = np.asarray(z, dtype=float)
    base = psi(zarr, gamma, constitutive, tol=tol)
    out = base + zarr * gamma ** (-alpha)
    return float(out) if np.isscalar(z) else out


class _PsiTable:
    """Cumulative Gauss-Legendre table for psi when no closed form exists.

    Tabulates G(p) = int_0^p theta(t**(1/gamma)) dt with a 5-point rule per
    bin on a grid that is geometrically graded near p = 0 (the integrand
    behaves like a fractional power there) and uniform elsewhere; queries add
    a partial-bin 5-point rule, so the evaluation is smooth and monotone in p.
    """

    _nodes, _weights = np.polynomial.legendre.leggauss(5)

    def __init__(self, constitutive: Constitutive, gamma: float,
                 p_cap: float, bins_per_unit: int = 2048):
        self.constitutive = constitutive
        self.gamma = gamma
        self.p_cap = float(p_cap)
        n_uniform = max(256, int(math.ceil(bins_per_unit * self.p_cap)))
        uniform = np.linspace(0.0, self.p_cap, n_uniform + 1)
        head = uniform[1] * 2.0 ** np.arange(-48.0, 0.0)
        self.edges = np.concatenate([[0.0], head, uniform[1:]])
        mids = 0.5 * (self.edges[:-1] + self.edges[1:])
        halves = 0.5 * np.diff(self.edges)
        samples = mids[:, None] + halves[:, None] * self._nodes[None, :]
        per_bin = halves * (self._integrand(samples) @ self._weights)
        self.cum = np.concatenate([[0.0], np.cumsum(per_bin)])

    def _integrand(self, t):
        return self.constitutive.theta(np.maximum(t, 0.0) ** (1.0 / self.gamma))

    def eval_p(self, p: FloatArray) -> FloatArray:
        p = np.asarray(p, dtype=float)
        idx = np.searchsorted(self.edges, p, side="right") - 1
        idx = np.clip(idx, 0, self.edges.size - 2)
        p0 = self.edges[idx]
        half = 0.5 * np.maximum(p - p0, 0.0)
        samples = (p0 + half)[..., None] + half[..., None] * self._nodes
        partial = half * (self._integrand(samples) @ self._weights)
        return self.cum[idx] + partial


@dataclass(frozen=True)
class StiffParams:
    """Stiffness exponents; both must exceed 1 strictly."""

    gamma: float
    alpha: float

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must be strictly greater than 1, got {self.gamma}")
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must be strictly greater than 1, got {self.alpha}")


class Model:
    """A constitutive bundle specialized to one (gamma, alpha) pair.

    Provides the vectorized regularized flux potential and source used by the
    implicit stepper, plus the derived scalar constants (r_phi, beta).
    """

    def __init__(self, constitutive: Constitutive, stiff: StiffParams):
        self.constitutive = constitutive
        self.stiff = stiff
        self.gamma = stiff.gamma
        self.alpha = stiff.alpha
        self.gamma_neg_alpha = stiff.gamma ** (-stiff.alpha)
        self._table: _PsiTable | None = None
        self._r_phi: float | None = None
        self._beta: float | None = None

    @property
    def p_M(self) -> float:
        return self.constitutive.p_M

    def pressure(self, u: FloatArray) -> FloatArray:
        return np.asarray(u, dtype=float) ** self.gamma

    def _psi_plain(self, u: FloatArray) -> FloatArray:
        c = self.constitutive
        if c.psi_closed is not None:
            return c.psi_closed(u, self.gamma)
        p = np.asarray(u, dtype=float) ** self.gamma
        p_max = float(p.max(initial=0.0))
        if self._table is None or p_max > self._table.p_cap:
            cap = max(1.5 * c.p_M, 2.0 * p_max, 1.0)
            self._table = _PsiTable(c, self.gamma, cap)
        return self._table.eval_p(p)

    def psi_plain(self, u: FloatArray) -> FloatArray:
        """Unregularized flux potential; its two-point face difference is the
        exact discrete form of theta(u) grad p."""
        return self._psi_plain(np.asarray(u, dtype=float))

    def psi_gamma(self, u: FloatArray) -> FloatArray:
        """Regularized flux potential psi(u) + u/gamma**alpha."""
        u = np.asarray(u, dtype=float)
        return self._psi_plain(u) + self.gamma_neg_alpha * u

    def psi_gamma_prime(self, u: FloatArray) -> FloatArray:
        """d/du of the regularized potential: gamma*theta(u)*u**(gamma-1) + gamma**-alpha."""
        u = np.asarray(u, dtype=float)
        return (self.gamma * self.constitutive.theta(u) * u ** (self.gamma - 1.0)
                + self.gamma_neg_alpha)

    def source(self, u: FloatArray) -> FloatArray:
        """gamma**(-alpha) * u * phi(u**gamma), or zero when the source is disabled."""
        u = np.asarray(u, dtype=float)
        if not self.constitutive.source_enabled:
            return np.zeros_like(u)
        return self.gamma_neg_alpha * u * self.constitutive.phi(u ** self.gamma)

    def source_prime(self, u: FloatArray) -> FloatArray:
        u = np.asarray(u, dtype=float)
        if not self.constitutive.source_enabled:
            return np.zeros_like(u)
        p = u ** self.gamma
        return self.gamma_neg_alpha * (self.constitutive.phi(p)
                                       + self.gamma * p * self.constitutive.dphi(p))

    def r_phi(self) -> float:
        if self._r_phi is None:
            self._r_phi = r_phi(self.constitutive)
        return self._r_phi

    def has_comparison_weight(self) -> bool:
        """Whether the source-based comparison bounds apply (source enabled
        with a non-degenerate decay rate)."""
        return self.constitutive.source_enabled and self.r_phi() > 0.0

    def beta(self) -> float:
        if self._beta is None:
            self._beta = beta(self.constitutive)
        return self._beta


# ---------------------------------------------------------------------------
# derived constants of the source profile


def _sampled_min(fn: Callable[[FloatArray], FloatArray], lo: float, hi: float,
                 n_samples: int = 10001) -> float:
    """Dense-sampling minimum refined by golden-section around the argmin."""
    xs = np.linspace(lo, hi, n_samples)
    vals = np.asarray(fn(xs), dtype=float)
    i = int(np.argmin(vals))
    if i == 0 or i == n_samples - 1:
        return float(vals[i])
    a, b = xs[i - 1], xs[i + 1]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc = float(fn(np.array([c]))[0])
    fd = float(fn(np.array([d]))[0])
    for _ in range(80):
        if b - a < 1e-14 * max(1.0, abs(a)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = float(fn(np.array([c]))[0])
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = float(fn(np.array([d]))[0])
    return min(float(vals[i]), fc, fd)


def r_phi(constitutive: Constitutive) -> float:
    """min over [0, p_M] of phi(p) - dphi(p)*p; must come out non-negative."""
    c = constitutive
    val = _sampled_min(lambda p: np.asarray(c.phi(p)) - np.asarray(c.dphi(p)) * p,
                       0.0, c.p_M)
    if val < -1e-12 * max(1.0, abs(float(np.asarray(c.phi(0.0))))):
        raise ConstitutiveError(
            f"hypothesis A violated: min(phi - phi'*p) = {val:.6e} is negative")
    return max(val, 0.0)


def beta(constitutive: Constitutive) -> float:
    """-min over [0, p_M] of dphi; positive for strictly decreasing phi."""
    val = -_sampled_min(lambda p: np.asarray(constitutive.dphi(p), dtype=float),
                        0.0, constitutive.p_M)
    if val <= 0.0:
        raise ConstitutiveError(
            f"hypothesis A violated: phi must be strictly decreasing on [0, p_M] "
            f"(-min phi' = {val:.6e})")
    return val


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    """Outcome of a sampled admissibility check."""

    ok: bool
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    scalars: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append((name, passed, detail))
        self.ok = self.ok and passed


def validate_constitutive(constitutive: Constitutive, gamma_max: float = 128.0,
                          n_samples: int = 2048, margin: float = 0.1) -> ValidationReport:
    """Sampled admissibility checks for a constitutive bundle (hypothesis A).

    Raises :class:`ConstitutiveError` on the first violated check. The
    test-only diffusion override is exempt and returns a report with a warning.
    """
    c = constitutive
    rep = ValidationReport(ok=True)
    if c.theta_is_one and not c.source_enabled:
        rep.warnings.append(
            "test-only diffusion override: admissibility checks bypassed")
        return rep

    z_hi = c.p_M ** (1.0 / gamma_max) + margin
    zs = np.linspace(0.0, z_hi, n_samples)

    hv = np.asarray(c.h(zs), dtype=float)
    if not np.all(hv >= c.h_floor - 1e-12):
        raise ConstitutiveError(
            f"hypothesis A violated: h drops below its floor {c.h_floor} "
            f"(min sampled {hv.min():.6e})")
    rep.add("h_floor", True)

    g0 = float(np.asarray(c.g(0.0)))
    if abs(g0) > 1e-12:
        raise ConstitutiveError(f"hypothesis A violated: g(0) = {g0:.3e}, expected 0")
    gv = np.asarray(c.g(zs[1:]), dtype=float)
    if not np.all(gv > 0.0):
        raise ConstitutiveError("hypothesis A violated: g must be positive for z > 0")
    rep.add("g_sign", True)

    zn = np.linspace(1.0 - c.delta, 1.0 + c.delta, 512)
    gn = np.asarray(c.g(zn), dtype=float)
    if not np.all(np.diff(gn) >= -1e-12):
        raise ConstitutiveError(
            f"hypothesis A violated: g is not non-decreasing on |z-1| < {c.delta}")
    rep.add("g_monotone_near_one", True)

    zt = np.linspace(0.0, 1.0 + margin, n_samples)
    tv = np.asarray(c.theta(zt), dtype=float)
    if not np.all(np.diff(tv) >= -1e-12):
        raise ConstitutiveError("hypothesis A violated: g/h is not non-decreasing")
    rep.add("theta_monotone", True)

    ps = np.linspace(0.0, c.p_M, n_samples)
    dv = np.asarray(c.dphi(ps), dtype=float)
    if not np.all(dv < 0.0):
        raise ConstitutiveError("hypothesis A violated: phi' must be negative on [0, p_M]")
    phi_pm = float(np.asarray(c.phi(c.p_M)))
    if abs(phi_pm) > 1e-12:
        raise ConstitutiveError(
            f"hypothesis A violated: phi(p_M) = {phi_pm:.3e}, expected 0")
    rep.add("phi_shape", True)

    rp = r_phi(c)
    if rp <= 0.0:
        raise ConstitutiveError(
            "hypothesis A violated: min(phi - phi'*p) = 0, "
            "the comparison weight is degenerate")
    rep.scalars["r_phi"] = rp
    rep.scalars["beta"] = beta(c)
    rep.add("r_phi_positive", True)
    return rep


@dataclass(frozen=True)
class ProblemData:
    """Initial density, boundary flux and horizon for one run.

    ``boundary_flux(t, centroids)`` returns the prescribed normal flux on the
    given boundary-face centroids (positive = mass inflow). ``flux_floor`` is
    the declared lower bound on |flux|; zero is permitted for oracle runs.
    ``outflux_switch`` is the density scale below which outflow through a
    boundary face is smoothly throttled, keeping the implicit step feasible
    when a face with prescribed outflow sits on vacuum.
    """

    u0: FloatArray
    boundary_flux: Callable[[float, FloatArray], FloatArray]
    flux_floor: float = 0.0
    horizon: float = 1.0
    outflux_switch: float = 1e-6


def boundary_flux_l1(data: ProblemData, grid: Grid, n_time: int = 512) -> float:
    """Time-space integral of |flux| over the lateral boundary, composite Simpson."""
    if data.horizon <= 0.0:
        return 0.0
    n = n_time + (n_time % 2)
    ts = np.linspace(0.0, data.horizon, n + 1)
    barea = grid.faces.barea
    cent = grid.faces.bcentroid
    per_t = np.array([float(np.sum(np.abs(np.asarray(
        data.boundary_flux(t, cent), dtype=float)) * barea)) for t in ts])
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((ts[1] - ts[0]) / 3.0 * np.sum(w * per_t))


def bv_seminorm(field_values: FloatArray, grid: Grid) -> float:
    """Discrete total-variation seminorm: face gradients against dual volumes.

    Exact for affine fields (the terminal faces of each grid line carry the
    edge half-cells).
    """
    f = grid.faces
    grads = np.abs(field_values[f.right] - field_values[f.left]) / f.dist
    return float(np.sum(grads * f.dual_volume))


def validate_data(data: ProblemData, grid: Grid, stiff: StiffParams,
                  constitutive: Constitutive) -> ValidationReport:
    """Check the initial/boundary data against the data assumptions (hypothesis B)."""
    rep = ValidationReport(ok=True)
    u0 = np.asarray(data.u0, dtype=float)
    if u0.shape != (grid.n_cells,):
        raise DataValidationError(
            f"u0 has shape {u0.shape}, expected ({grid.n_cells},)")
    if np.any(u0 < 0.0):
        raise DataValidationError(
            f"hypothesis B violated: negative initial density (min {u0.min():.3e})")
    rep.add("u0_nonnegative", True)
    p0_max = float(np.max(u0) ** stiff.gamma)
    if p0_max > constitutive.p_M * (1.0 + 1e-12):
        raise DataValidationError(
            f"hypothesis B violated: initial pressure {p0_max:.6g} exceeds "
            f"p_M = {constitutive.p_M:.6g}")
    rep.add("initial_pressure_cap", True)
    if data.horizon < 0.0:
        raise DataValidationError(f"horizon must be non-negative, got {data.horizon}")

    cent = grid.faces.bcentroid
    ts = np.linspace(0.0, max(data.horizon, 1e-12), 33)
    fvals = np.array([np.asarray(data.boundary_flux(t, cent), dtype=float) for t in ts])
    if not np.all(np.isfinite(fvals)):
        raise DataValidationError("hypothesis B violated: boundary flux is not finite")
    rep.add("flux_finite", True)
    if data.flux_floor > 0.0:
        if np.abs(fvals).min() < data.flux_floor - 1e-12:
            raise DataValidationError(
                f"hypothesis B violated: |flux| dips below the declared floor "
                f"{data.flux_floor:g} (min sampled {np.abs(fvals).min():.3e})")
        rep.add("flux_floor", True)
    else:
        rep.warnings.append(
            "flux_floor is 0: the boundary flux may vanish; acceptable for oracle runs")

    rep.scalars["u0_l1"] = float(np.sum(np.abs(u0)) * grid.cell_volume)
    rep.scalars["u0_bv"] = bv_seminorm(u0, grid)
    rep.scalars["flux_l1"] = boundary_flux_l1(data, grid)
    return rep
