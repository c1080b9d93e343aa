"""Collapse-model kernels, coefficients and parameter maps.

Everything here is a pure function of a :class:`CollapseParams` value. Kernels
are returned as evaluation rules (:class:`MomentumKernel`) and never as
tables; putting them on a grid is the job of :mod:`collapsesim.wigner`.

The module does not carry units. Temperatures are measured in energy units
(Boltzmann constant set to one); callers that need SI temperatures divide by
``scipy.constants.k`` themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy import integrate, special

__all__ = [
    "CollapseParams",
    "MomentumKernel",
    "InvalidParameterError",
    "SingularPointError",
    "Smearing",
    "grw_momentum_kernel",
    "kramers_moyal_coefficient",
    "diffusion_constant",
    "csl_rate_from_xi",
    "mass_form_factor",
    "dp_jump_kernel",
    "dp_marginal_kernel",
    "dp_marginal_second_moment",
    "dissipative_kernel_expanded",
    "position_rep_multiplier",
]

Smearing = Literal["gaussian", "hard_sphere"]


class InvalidParameterError(ValueError):
    """Raised for non-finite or out-of-range model constants."""


class SingularPointError(ArithmeticError):
    """Raised when a kernel is evaluated at a point where it diverges."""


@dataclass(frozen=True)
class CollapseParams:
    """Constants of the collapse models in a single, unit-agnostic bundle.

    Parameters
    ----------
    lam : float
        Collapse (localization) rate.
    alpha : float
        Inverse squared localization length.
    hbar : float
        Reduced Planck constant in the chosen unit system.
    k_temp : float
        Dimensionless temperature parameter of the dissipative model.
    gamma : float
        Momentum damping rate.
    noise_temp : float
        Noise temperature in energy units.
    mass : float
        Particle mass.
    grav_const : float
        Newton's constant (gravity-induced collapse only).
    smear_radius : float
        Mass-density smearing length.
    dims : int
        Spatial dimension, 1, 2 or 3.
    """

    lam: float = 0.0
    alpha: float = 1.0
    hbar: float = 1.0
    k_temp: float = 0.0
    gamma: float = 0.0
    noise_temp: float = math.inf
    mass: float = 1.0
    grav_const: float = 0.0
    smear_radius: float = 1.0
    dims: int = 1

    def __post_init__(self):
        for name in ("lam", "alpha", "hbar", "k_temp", "gamma", "mass", "grav_const", "smear_radius"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value!r}")
        if math.isnan(self.noise_temp):
            raise InvalidParameterError("noise_temp must not be NaN")
        if self.lam < 0 or self.k_temp < 0 or self.gamma < 0 or self.grav_const < 0:
            raise InvalidParameterError("lam, k_temp, gamma and grav_const must be >= 0")
        if self.alpha <= 0 or self.hbar <= 0 or self.mass <= 0 or self.smear_radius <= 0:
            raise InvalidParameterError("alpha, hbar, mass and smear_radius must be > 0")
        if self.dims not in (1, 2, 3):
            raise InvalidParameterError(f"dims must be 1, 2 or 3, got {self.dims!r}")

    @classmethod
    def dissipative(cls, lam, alpha, hbar, k_temp, mass=1.0, dims=1, **kwargs) -> "CollapseParams":
        """Build parameters of the dissipative model, deriving damping and noise temperature.

        The damping rate is ``2 lam k`` and the noise temperature
        ``hbar**2 / (8 m k r_c**2)`` with ``r_c = 1/sqrt(alpha)``. For
        ``k_temp == 0`` the noise temperature is infinite (plain GRW limit).
        """
        gamma = 2.0 * lam * k_temp
        if k_temp > 0:
            noise_temp = hbar**2 * alpha / (8.0 * mass * k_temp)
        else:
            noise_temp = math.inf
        return cls(lam=lam, alpha=alpha, hbar=hbar, k_temp=k_temp, gamma=gamma,
                   noise_temp=noise_temp, mass=mass, dims=dims, **kwargs)

    @property
    def localization_length(self) -> float:
        return 1.0 / math.sqrt(self.alpha)

    def with_(self, **changes) -> "CollapseParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class MomentumKernel:
    """A momentum-space kernel given as an evaluation rule plus metadata.

    ``density`` maps momenta to kernel values. For ``dims == 1`` it accepts any
    array of scalars; otherwise the last axis holds the ``dims`` components.
    ``total_rate`` is the integral of the kernel over momentum space (``inf``
    when the kernel is not integrable).
    """

    density: Callable[[np.ndarray], np.ndarray]
    dims: int
    total_rate: float
    support: float = math.inf
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __call__(self, p):
        return self.density(np.asarray(p, dtype=float))


def _norm_sq(p: np.ndarray, dims: int) -> np.ndarray:
    if dims == 1:
        return p * p
    if p.shape[-1] != dims:
        raise ValueError(f"expected last axis of length {dims}, got shape {p.shape}")
    return np.sum(p * p, axis=-1)


def grw_momentum_kernel(params: CollapseParams) -> MomentumKernel:
    """Normalized Gaussian momentum kernel of a single GRW collapse.

    ``K(p) = (pi alpha hbar^2)^(-d/2) exp(-|p|^2 / (alpha hbar^2))``; each
    component has variance ``alpha hbar^2 / 2``.
    """
    width_sq = params.alpha * params.hbar**2
    dims = params.dims
    norm = (math.pi * width_sq) ** (-dims / 2.0)

    def density(p):
        return norm * np.exp(-_norm_sq(p, dims) / width_sq)

    return MomentumKernel(
        density=density,
        dims=dims,
        total_rate=1.0,
        name="grw",
        meta={"variance_per_component": 0.5 * width_sq, "lam": params.lam},
    )


def kramers_moyal_coefficient(n: int, params: CollapseParams) -> float:
    """Coefficient of the ``2n``-th momentum derivative in the expanded GRW generator.

    ``lam (alpha hbar^2)^n (2n-1)!! / (2^n (2n)!)``.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"order must be a positive integer, got {n!r}")
    n = int(n)
    double_fact = math.prod(range(2 * n - 1, 0, -2))
    return params.lam * (params.alpha * params.hbar**2) ** n * double_fact / (2**n * math.factorial(2 * n))


def diffusion_constant(params: CollapseParams) -> float:
    """Momentum diffusion constant ``d lam alpha hbar^2 / 4`` of the Fokker-Planck limit."""
    return params.dims * params.lam * params.alpha * params.hbar**2 / 4.0


def csl_rate_from_xi(xi: float, alpha: float) -> float:
    """Single-particle GRW rate equivalent to the CSL strength ``xi``."""
    if xi < 0:
        raise InvalidParameterError("xi must be >= 0")
    if alpha <= 0:
        raise InvalidParameterError("alpha must be > 0")
    return xi * (alpha / (4.0 * math.pi)) ** 1.5


def mass_form_factor(s, smearing: Smearing) -> np.ndarray:
    """Fourier transform of the smeared mass density divided by the mass.

    ``s`` is the dimensionless wavenumber ``|p| R0 / hbar``.
    """
    s = np.asarray(s, dtype=float)
    if smearing == "gaussian":
        return np.exp(-0.5 * s * s)
    if smearing == "hard_sphere":
        # 3 j1(s)/s, the transform of a uniform ball; equals 1 at s = 0
        out = np.ones_like(s)
        nz = s != 0
        out[nz] = 3.0 * special.spherical_jn(1, s[nz]) / s[nz]
        return out
    raise ValueError(f"unknown smearing {smearing!r}")


def _dp_prefactor(params: CollapseParams) -> float:
    return 4.0 * params.grav_const * params.mass**2 / (math.pi * params.hbar**2)


def _dp_total_rate_3d(params: CollapseParams, smearing: Smearing) -> float:
    # radial form: the p^2 Jacobian cancels the 1/p^2 divergence
    if params.grav_const == 0:
        return 0.0
    scale = params.hbar / params.smear_radius

    def radial(s):
        return mass_form_factor(s, smearing) ** 2

    if smearing == "gaussian":
        val, _ = integrate.quad(radial, 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    else:
        # oscillatory tail decays like s^-4; split into periods for robustness
        edges = np.concatenate([[0.0], np.arange(1, 400) * math.pi])
        val = sum(integrate.quad(radial, a, b, epsabs=0.0, epsrel=1e-12)[0] for a, b in zip(edges[:-1], edges[1:]))
        tail_start = edges[-1]
        # remaining tail: F^2 ~ 9 cos^2(s)/s^4, average 4.5/s^4
        val += 1.5 / tail_start**3
    return _dp_prefactor(params) * 4.0 * math.pi * scale * val


def dp_jump_kernel(params: CollapseParams, smearing: Smearing = "gaussian") -> MomentumKernel:
    """Jump-rate kernel of the gravity-induced collapse model.

    ``Gamma(p) = (4 G / (pi hbar^2)) |mu(p)|^2 / |p|^2`` evaluated in
    ``params.dims`` dimensions. The kernel diverges at ``p = 0``; evaluating
    there raises :class:`SingularPointError`. Only in three dimensions is the
    kernel integrable, so ``total_rate`` is infinite for ``dims < 3``.
    """
    if smearing not in ("gaussian", "hard_sphere"):
        raise ValueError(f"unknown smearing {smearing!r}")
    dims = params.dims
    pref = _dp_prefactor(params)
    r_over_hbar = params.smear_radius / params.hbar

    def density(p):
        p2 = _norm_sq(p, dims)
        if np.any(p2 == 0):
            raise SingularPointError("gravity-induced kernel diverges at p = 0")
        s = np.sqrt(p2) * r_over_hbar
        return pref * mass_form_factor(s, smearing) ** 2 / p2

    if params.grav_const == 0:
        total = 0.0
    elif dims == 3:
        total = _dp_total_rate_3d(params, smearing)
    else:
        total = math.inf
    return MomentumKernel(density=density, dims=dims, total_rate=total, name=f"dp_{smearing}",
                          meta={"smearing": smearing})


def _dp_marginal_profile(q, params: CollapseParams, smearing: Smearing) -> np.ndarray:
    # integral of the 3D kernel over the two transverse momentum components
    q = np.abs(np.asarray(q, dtype=float))
    pref = 4.0 * params.grav_const * params.mass**2 / params.hbar**2
    a = (params.smear_radius / params.hbar) ** 2
    if smearing == "gaussian":
        return pref * special.exp1(a * q * q)
    out = np.empty_like(q)
    k = params.smear_radius / params.hbar
    for idx, qi in np.ndenumerate(q):
        s0 = qi * k
        val, _ = integrate.quad(lambda s: 2.0 * mass_form_factor(s, smearing) ** 2 / s, s0, np.inf, limit=500)
        out[idx] = pref * val
    return out


def dp_marginal_kernel(params: CollapseParams, smearing: Smearing = "gaussian") -> MomentumKernel:
    """One-component marginal of the three-dimensional jump kernel.

    This is the kernel seen by the momentum component along one axis when the
    transverse components are integrated out. It keeps a logarithmic
    singularity at the origin but is integrable, and its total rate equals the
    full three-dimensional rate. For Gaussian smearing it is
    ``(4 G m^2 / hbar^2) E1(R0^2 q^2 / hbar^2)``.
    """
    full = params.with_(dims=3)

    def density(q):
        q = np.asarray(q, dtype=float)
        if np.any(q == 0):
            raise SingularPointError("marginal gravity-induced kernel diverges at q = 0")
        return _dp_marginal_profile(q, full, smearing)

    total = _dp_total_rate_3d(full, smearing)
    return MomentumKernel(density=density, dims=1, total_rate=total, name=f"dp_marginal_{smearing}",
                          meta={"smearing": smearing})


def dp_marginal_second_moment(params: CollapseParams, smearing: Smearing = "gaussian") -> float:
    """Per-component second moment of the jump kernel, from its 3D radial form."""
    if params.grav_const == 0:
        return 0.0
    scale = params.hbar / params.smear_radius

    def radial(s):
        return s * s * mass_form_factor(s, smearing) ** 2

    if smearing == "gaussian":
        val, _ = integrate.quad(radial, 0.0, np.inf, epsrel=1e-12, limit=200)
    else:
        edges = np.arange(0, 2000) * math.pi
        val = sum(integrate.quad(radial, a, b, epsrel=1e-12)[0] for a, b in zip(edges[:-1], edges[1:]))
        val += 4.5 / edges[-1]
    return _dp_prefactor(params) * 4.0 * math.pi * scale**3 * val / 3.0


def dissipative_kernel_expanded(params: CollapseParams) -> tuple[float, float]:
    """Drift and diffusion coefficients of the small-``k`` dissipative generator.

    Returns ``(gamma, gamma m T_n)`` with ``gamma = 2 lam k`` and
    ``T_n = hbar^2 alpha / (8 m k)``; these multiply ``d/dp (p W)`` and
    ``d^2 W / dp^2``. The diffusion coefficient simplifies to
    ``lam alpha hbar^2 / 4`` for every ``k``, and for ``k = 0`` the pair is
    ``(0, d lam alpha hbar^2 / 4)``.
    """
    if params.k_temp == 0:
        return 0.0, diffusion_constant(params)
    gamma = 2.0 * params.lam * params.k_temp
    noise_temp = params.hbar**2 * params.alpha / (8.0 * params.mass * params.k_temp)
    return gamma, gamma * params.mass * noise_temp


def position_rep_multiplier(params: CollapseParams, x_prime) -> np.ndarray:
    """Factor ``exp(-alpha x'^2 / 4)`` applied by one collapse to the p-Fourier transform of W."""
    x_prime = np.asarray(x_prime, dtype=float)
    return np.exp(-0.25 * params.alpha * x_prime * x_prime)
