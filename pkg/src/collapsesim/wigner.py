"""Grid integrator for single-particle Wigner master equations in one dimension.

The state lives on a uniform ``(x, p)`` tensor grid, periodic in ``x`` and
closed (zero flux) in ``p``. Hamiltonian streaming uses semi-Lagrangian shifts
with cubic Lagrange interpolation; the collapse generators act along ``p`` only
and are combined with streaming by Strang splitting.

Cubic Lagrange shifts reproduce cubic polynomials exactly, so discrete moments
of ``W`` up to third order are transported without interpolation error as long
as the state decays before the ``p`` boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, signal

from .kernels import (
    CollapseParams,
    diffusion_constant,
    dissipative_kernel_expanded,
    dp_marginal_kernel,
    mass_form_factor,
    position_rep_multiplier,
)

__all__ = [
    "WignerGrid",
    "Potential",
    "GeneratorSpec",
    "SolverError",
    "StepSizeError",
    "DomainTooSmallError",
    "ResolutionError",
    "gaussian_state",
    "streaming_step",
    "grw_convolve",
    "collapse_step_grw",
    "collapse_step_fokker_planck",
    "collapse_step_kramers",
    "caldeira_leggett_step",
    "kramers_bath_step",
    "dp_cell_weights",
    "collapse_step_diosi_penrose",
    "strang_step",
    "observables",
    "write_csv",
]

Mode = Literal[
    "liouville_classical",
    "moyal_order3",
    "grw_master",
    "grw_fokker_planck",
    "dissipative_kramers",
    "diosi_penrose_master",
]
MODES = ("liouville_classical", "moyal_order3", "grw_master", "grw_fokker_planck",
         "dissipative_kramers", "diosi_penrose_master")


class SolverError(RuntimeError):
    """Base class for phase-space solver failures."""


class StepSizeError(SolverError):
    """The time step violates a stability or accuracy bound of an explicit update."""


class DomainTooSmallError(SolverError):
    """Probability leaks across the momentum boundary."""


class ResolutionError(SolverError):
    """A kernel is too narrow or too wide for the momentum grid."""


@dataclass
class WignerGrid:
    """``W(x_i, p_j)`` on a uniform grid.

    ``x`` nodes are ``x_min + i dx`` (periodic, ``dx = (x_max - x_min)/nx``);
    ``p`` nodes are cell centres ``p_min + (j + 1/2) dp``. ``values`` has shape
    ``(nx, n_p)``.
    """

    values: np.ndarray
    x_min: float
    x_max: float
    p_min: float
    p_max: float
    time: float = 0.0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) < 4:
            raise ValueError(f"values must be a 2D array with both sizes >= 4, got {self.values.shape}")
        if not (self.x_max > self.x_min and self.p_max > self.p_min):
            raise ValueError("domain bounds must be increasing")
        if not np.all(np.isfinite(self.values)):
            raise SolverError("grid values contain NaN or Inf")

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def n_p(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    @property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * (np.arange(self.n_p) + 0.5)

    def norm(self) -> float:
        return float(self.values.sum() * self.dx * self.dp)

    def with_values(self, values: np.ndarray, dt: float = 0.0) -> "WignerGrid":
        return replace(self, values=values, time=self.time + dt)


def gaussian_state(nx, n_p, x_range, p_range, mean=(0.0, 0.0), std=(1.0, 1.0)) -> WignerGrid:
    """Normalized product Gaussian in ``x`` and ``p`` on a fresh grid."""
    grid = WignerGrid(np.zeros((nx, n_p)), x_range[0], x_range[1], p_range[0], p_range[1])
    gx = np.exp(-0.5 * ((grid.x - mean[0]) / std[0]) ** 2)
    gp = np.exp(-0.5 * ((grid.p - mean[1]) / std[1]) ** 2)
    vals = np.outer(gx, gp)
    vals /= vals.sum() * grid.dx * grid.dp
    return grid.with_values(vals)


@dataclass(frozen=True)
class Potential:
    """Polynomial potential energy ``U(x)`` with exact derivatives."""

    poly: Polynomial = field(default_factory=lambda: Polynomial([0.0]))

    @classmethod
    def free(cls) -> "Potential":
        return cls(Polynomial([0.0]))

    @classmethod
    def harmonic(cls, mass: float, omega: float) -> "Potential":
        return cls(Polynomial([0.0, 0.0, 0.5 * mass * omega**2]))

    @classmethod
    def quartic(cls, strength: float = 1.0) -> "Potential":
        return cls(Polynomial([0.0, 0.0, 0.0, 0.0, strength]))

    def derivative(self, order: int):
        return self.poly.deriv(order) if order else self.poly

    def __call__(self, x):
        return self.poly(np.asarray(x, dtype=float))

    @property
    def is_free(self) -> bool:
        return not np.any(self.poly.deriv(1).coef)


@dataclass(frozen=True)
class GeneratorSpec:
    """Model selection for :func:`strang_step`.

    ``quantum_correction`` controls whether the third-order Moyal term is part
    of the streaming used by the collapse modes.
    """

    mode: Mode
    potential: Potential = field(default_factory=Potential.free)
    params: CollapseParams = field(default_factory=CollapseParams)
    smearing: str = "gaussian"
    quantum_correction: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown generator mode {self.mode!r}")
        if self.mode == "diosi_penrose_master" and self.params.grav_const <= 0:
            raise ValueError("diosi_penrose_master requires grav_const > 0")
        if self.mode == "dissipative_kramers" and self.params.gamma <= 0 and self.params.k_temp <= 0:
            raise ValueError("dissipative_kramers requires gamma > 0 or k_temp > 0")


# ---- semi-Lagrangian shifts ------------------------------------------------

def _lagrange_weights(t):
    return (
        -t * (t - 1) * (t - 2) / 6,
        (t + 1) * (t - 1) * (t - 2) / 2,
        -(t + 1) * t * (t - 2) / 2,
        (t + 1) * t * (t - 1) / 6,
    )


def _shift(values: np.ndarray, shifts: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Return ``f(k - s)`` along ``axis`` with per-line shifts ``s`` in cells."""
    work = np.moveaxis(values, axis, -1)
    n = work.shape[-1]
    shifts = np.asarray(shifts, dtype=float)[:, None]
    whole = np.floor(shifts)
    t = 1.0 - (shifts - whole)
    base = np.arange(n)[None, :] - whole.astype(np.int64) - 1
    out = np.zeros_like(work)
    rows = np.arange(work.shape[0])[:, None]
    for offset, w in zip((-1, 0, 1, 2), _lagrange_weights(t)):
        idx = base + offset
        if periodic:
            out += w * work[rows, idx % n]
        else:
            inside = (idx >= 0) & (idx < n)
            out += w * np.where(inside, work[rows, np.clip(idx, 0, n - 1)], 0.0)
    return np.moveaxis(out, -1, axis)


def _drift_x(grid: WignerGrid, mass: float, dt: float) -> np.ndarray:
    cells = grid.p * dt / (mass * grid.dx)
    if np.max(np.abs(cells)) > 1.0:
        raise StepSizeError(f"x-advection moves {np.max(np.abs(cells)):.3g} cells per substep; reduce dt")
    return _shift(grid.values, cells, axis=0, periodic=True)


def _kick_p(values: np.ndarray, grid: WignerGrid, force: np.ndarray, dt: float) -> np.ndarray:
    # dW/dt = U' dW/dp moves W towards lower p where U' > 0
    cells = -force * dt / grid.dp
    if np.max(np.abs(cells)) > 1.0:
        raise StepSizeError(f"p-advection moves {np.max(np.abs(cells)):.3g} cells per substep; reduce dt")
    return _shift(values, cells, axis=1, periodic=False)


_D3_INNER = np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0
# largest |symbol| of the stencil, for the RK4 stability bound
_D3_SYMBOL_MAX = float(np.max(np.abs(
    [np.sum(_D3_INNER * np.sin(th * np.arange(-3, 4))) for th in np.linspace(0, np.pi, 2001)])))


def _third_derivative_p(values: np.ndarray, dp: float) -> np.ndarray:
    # zero ghost cells keep the operator skew-symmetric (neutrally stable);
    # one-sided closures give growing modes under RK4
    padded = np.pad(values, ((0, 0), (3, 3)))
    n = values.shape[1]
    out = np.zeros_like(values)
    for k, c in enumerate(_D3_INNER):
        if c:
            out += c * padded[:, k:k + n]
    return out / dp**3


def _moyal_correction(values: np.ndarray, grid: WignerGrid, third: np.ndarray, hbar: float, dt: float) -> np.ndarray:
    coef = -(hbar**2 / 24.0) * third[:, None]
    peak = float(np.max(np.abs(coef))) * _D3_SYMBOL_MAX / grid.dp**3
    if peak == 0.0:
        return values
    nsub = max(1, math.ceil(dt * peak / 2.5))
    h = dt / nsub

    def rhs(w):
        return coef * _third_derivative_p(w, grid.dp)

    for _ in range(nsub):
        k1 = rhs(values)
        k2 = rhs(values + 0.5 * h * k1)
        k3 = rhs(values + 0.5 * h * k2)
        k4 = rhs(values + h * k3)
        values = values + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return values


def streaming_step(grid: WignerGrid, spec: GeneratorSpec, dt: float) -> WignerGrid:
    """Advance the Hamiltonian part by ``dt`` (drift, kick, drift).

    ``liouville_classical`` omits the third-order Moyal term; every other mode
    includes it unless ``spec.quantum_correction`` is false.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    mass = spec.params.mass
    half = replace(grid, values=_drift_x(grid, mass, 0.5 * dt))
    vals = half.values
    if not spec.potential.is_free:
        force = spec.potential.derivative(1)(grid.x)
        vals = _kick_p(vals, grid, force, dt)
        quantum = spec.mode == "moyal_order3" or (spec.mode != "liouville_classical" and spec.quantum_correction)
        if quantum:
            third = spec.potential.derivative(3)(grid.x)
            if np.any(third):
                vals = _moyal_correction(vals, grid, third, spec.params.hbar, dt)
    vals = _drift_x(replace(grid, values=vals), mass, 0.5 * dt)
    _check_finite(vals)
    return grid.with_values(vals, dt)


def _check_finite(values):
    if not np.all(np.isfinite(values)):
        raise SolverError("update produced NaN or Inf")


# ---- collapse generators ---------------------------------------------------

EDGE_LEAK_TOL = 1e-6


def grw_convolve(grid: WignerGrid, params: CollapseParams) -> np.ndarray:
    """Convolve ``W`` along ``p`` with the GRW kernel (one exact collapse event).

    The convolution runs in the DFT domain on a zero-padded axis. Probability
    that would leave the momentum window is folded back periodically, which
    keeps the norm exact; if that spill exceeds ``EDGE_LEAK_TOL`` of the norm a
    :class:`DomainTooSmallError` is raised.
    """
    n = grid.n_p
    spec = np.fft.rfft(grid.values, n=2 * n, axis=1)
    kappa = 2.0 * np.pi * np.fft.rfftfreq(2 * n, d=grid.dp)
    padded = np.fft.irfft(spec * position_rep_multiplier(params, params.hbar * kappa), n=2 * n, axis=1)
    spill = padded[:, n:]
    total = abs(grid.values.sum())
    if total > 0 and np.abs(spill).sum() > EDGE_LEAK_TOL * total:
        raise DomainTooSmallError(
            f"collapse kernel moves {np.abs(spill).sum() / total:.2e} of the norm beyond the momentum window")
    return padded[:, :n] + spill


def collapse_step_grw(grid: WignerGrid, params: CollapseParams, dt: float) -> WignerGrid:
    """Explicit step of the GRW master equation, ``W <- W - dt lam (W - K*W)``."""
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    if dt * params.lam > 0.1:
        raise StepSizeError(f"dt*lam = {dt * params.lam:.3g} exceeds 0.1")
    if params.lam == 0:
        return grid.with_values(grid.values.copy(), dt)
    rate = dt * params.lam
    vals = (1.0 - rate) * grid.values + rate * grw_convolve(grid, params)
    return grid.with_values(vals, dt)


def kramers_bath_step(values: np.ndarray, p: np.ndarray, dp: float, gamma: float, diffusion: float,
                      dt: float) -> np.ndarray:
    """Flux-form explicit update of ``dW/dt = gamma d_p(p W) + diffusion d_p^2 W``.

    Fluxes vanish at both momentum walls, so the discrete norm is conserved to
    roundoff.
    """
    if dt * diffusion / dp**2 > 0.25:
        raise StepSizeError(f"dt*D/dp^2 = {dt * diffusion / dp**2:.3g} exceeds 0.25")
    if dt * gamma > 0.1:
        raise StepSizeError(f"dt*gamma = {dt * gamma:.3g} exceeds 0.1")
    p_face = 0.5 * (p[1:] + p[:-1])
    # flux J = -gamma p W - D dW/dp through interior faces
    flux = -gamma * p_face * 0.5 * (values[:, 1:] + values[:, :-1]) - diffusion * np.diff(values, axis=1) / dp
    div = np.zeros_like(values)
    div[:, :-1] -= flux
    div[:, 1:] += flux
    return values + (dt / dp) * div


def collapse_step_fokker_planck(grid: WignerGrid, params: CollapseParams, dt: float) -> WignerGrid:
    """Momentum diffusion with ``D_p`` from :func:`diffusion_constant` (one-dimensional grid)."""
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    diff = diffusion_constant(params.with_(dims=1))
    vals = kramers_bath_step(grid.values, grid.p, grid.dp, 0.0, diff, dt)
    return grid.with_values(vals, dt)


def _kramers_coefficients(params: CollapseParams) -> tuple[float, float]:
    if params.k_temp > 0:
        return dissipative_kernel_expanded(params.with_(dims=1))
    # explicit gamma and noise temperature
    if params.gamma == 0:
        return 0.0, diffusion_constant(params.with_(dims=1))
    return params.gamma, params.gamma * params.mass * params.noise_temp


def collapse_step_kramers(grid: WignerGrid, params: CollapseParams, dt: float) -> WignerGrid:
    """Damping towards ``p = 0`` plus diffusion, relaxing to temperature ``T_n``.

    Coefficients come from :func:`dissipative_kernel_expanded` when ``k_temp``
    is set, otherwise from ``params.gamma`` and ``params.noise_temp``.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    gamma, diff = _kramers_coefficients(params)
    if not math.isfinite(diff):
        raise ValueError("Kramers step needs a finite noise temperature")
    vals = kramers_bath_step(grid.values, grid.p, grid.dp, gamma, diff, dt)
    return grid.with_values(vals, dt)


def caldeira_leggett_step(grid: WignerGrid, gamma: float, bath_temp: float, mass: float, dt: float) -> WignerGrid:
    """High-temperature Caldeira-Leggett (quantum Brownian motion) dissipator.

    Uses the same discrete operator as :func:`collapse_step_kramers`, so a
    bath at ``T_n`` gives a bitwise identical update.
    """
    vals = kramers_bath_step(grid.values, grid.p, grid.dp, gamma, gamma * mass * bath_temp, dt)
    return grid.with_values(vals, dt)


def dp_cell_weights(params: CollapseParams, dp: float, n_cells: int, smearing: str = "gaussian") -> np.ndarray:
    """Jump rates into momentum-offset cells ``k dp``, ``k = -(n-1) .. n-1``.

    Each weight integrates the one-component marginal of the 3D jump kernel
    over its cell, so the logarithmic singularity at the origin is absorbed
    into the central cell. Uses ``w_k = int_0^inf (2/p) F^2 l_k(p) dp`` times
    ``4 G m^2 / hbar^2``, where ``l_k(p)`` is the length of cell ``k`` inside
    ``[-p, p]``.
    """
    full = params.with_(dims=3)
    scale = full.smear_radius / full.hbar
    pref = 4.0 * full.grav_const * full.mass**2 / full.hbar**2
    marg = dp_marginal_kernel(full, smearing)

    def ff2(q):
        return float(mass_form_factor(np.array([q * scale]), smearing)[0]) ** 2

    half = 0.5 * dp
    weights = np.empty(n_cells)
    weights[0] = pref * 4.0 * integrate.quad(ff2, 0.0, half, epsabs=0.0, epsrel=1e-12)[0] + dp * float(marg(half))
    for k in range(1, n_cells):
        a, b = (k - 0.5) * dp, (k + 0.5) * dp
        inner = integrate.quad(lambda q: 2.0 * (q - a) / q * ff2(q), a, b, epsabs=0.0, epsrel=1e-12)[0]
        weights[k] = pref * inner + dp * float(marg(b))
    return np.concatenate([weights[:0:-1], weights])


def collapse_step_diosi_penrose(grid: WignerGrid, params: CollapseParams, dt: float,
                                smearing: str = "gaussian", weights: np.ndarray | None = None) -> WignerGrid:
    """Explicit jump-process step of the gravity-induced collapse model.

    Gain is the discrete convolution with :func:`dp_cell_weights`; loss counts
    only jumps that land inside the momentum window, so the norm is conserved
    exactly. Precomputed ``weights`` may be passed to avoid repeated quadrature.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    if params.grav_const == 0:
        return grid.with_values(grid.values.copy(), dt)
    width = params.hbar / params.smear_radius
    span = grid.p_max - grid.p_min
    if width < 4.0 * grid.dp:
        raise ResolutionError(f"kernel width hbar/R0 = {width:.3g} spans fewer than 4 momentum cells")
    if width > 0.25 * span:
        raise ResolutionError(f"kernel width hbar/R0 = {width:.3g} exceeds a quarter of the momentum window")
    n = grid.n_p
    if weights is None:
        weights = dp_cell_weights(params, grid.dp, n, smearing)
    total = dp_marginal_kernel(params.with_(dims=3), smearing).total_rate
    if dt * total > 0.1:
        raise StepSizeError(f"dt * total jump rate = {dt * total:.3g} exceeds 0.1")
    gain = signal.fftconvolve(grid.values, weights[None, :], mode="full", axes=1)[:, n - 1:2 * n - 1]
    # rate of jumps from cell j that stay inside: sum of w_k for k in [-j, n-1-j]
    csum = np.concatenate([[0.0], np.cumsum(weights)])
    j = np.arange(n)
    stay = csum[2 * n - 1 - j] - csum[n - 1 - j]
    vals = grid.values + dt * (gain - grid.values * stay[None, :])
    return grid.with_values(vals, dt)


def _collapse(grid: WignerGrid, spec: GeneratorSpec, dt: float, cache: dict) -> WignerGrid:
    mode = spec.mode
    if mode in ("liouville_classical", "moyal_order3"):
        return grid
    if mode == "grw_master":
        return collapse_step_grw(grid, spec.params, dt)
    if mode == "grw_fokker_planck":
        return collapse_step_fokker_planck(grid, spec.params, dt)
    if mode == "dissipative_kramers":
        return collapse_step_kramers(grid, spec.params, dt)
    key = (spec.params, spec.smearing, grid.dp, grid.n_p)
    if key not in cache:
        cache.clear()
        cache[key] = dp_cell_weights(spec.params, grid.dp, grid.n_p, spec.smearing)
    return collapse_step_diosi_penrose(grid, spec.params, dt, spec.smearing, cache[key])


_WEIGHT_CACHE: dict = {}


def strang_step(grid: WignerGrid, spec: GeneratorSpec, dt: float) -> WignerGrid:
    """Second-order split step: half streaming, full collapse, half streaming."""
    start = grid.time
    g = streaming_step(grid, spec, 0.5 * dt)
    g = _collapse(g, spec, dt, _WEIGHT_CACHE)
    g = streaming_step(g, spec, 0.5 * dt)
    return replace(g, time=start + dt)


# ---- observables and export -----------------------------------------------

def observables(grid: WignerGrid, mass: float = 1.0) -> dict:
    """Moments and marginals of ``W`` (cell sums, identical to the periodic trapezoid rule).

    ``kinetic_temperature`` is ``<p^2>/m`` with Boltzmann's constant set to one.
    """
    w = grid.values
    dx, dp = grid.dx, grid.dp
    x_marg = w.sum(axis=1) * dp
    p_marg = w.sum(axis=0) * dx
    norm = float(p_marg.sum() * dp)
    p = grid.p
    mean_p = float(np.sum(p * p_marg) * dp / norm)
    p2 = float(np.sum(p * p * p_marg) * dp / norm)
    return {
        "norm": norm,
        "x_marginal": x_marg,
        "p_marginal": p_marg,
        "mean_x": float(np.sum(grid.x * x_marg) * dx / norm),
        "mean_p": mean_p,
        "mean_p2": p2,
        "var_p": p2 - mean_p**2,
        "kinetic_temperature": p2 / mass,
        "negativity_volume": float(-np.minimum(w, 0.0).sum() * dx * dp),
    }


def write_csv(grid: WignerGrid, path, header_comment: str | None = None) -> None:
    """Write ``x, p, W`` triplets in full double precision."""
    xx, pp = np.meshgrid(grid.x, grid.p, indexing="ij")
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["x", "p", "W"])
        for row in zip(xx.ravel(), pp.ravel(), grid.values.ravel()):
            writer.writerow([f"{v:.17e}" for v in row])
