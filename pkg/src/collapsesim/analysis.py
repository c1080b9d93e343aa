"""Observables computed from particle snapshots.

Kinetic-energy density fields by cloud-in-cell deposition, y-averaged
profiles, direct-sum Fourier modes of the kinetic energy density and a
two-particle momentum factorization diagnostic.
"""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "StatisticsError",
    "FieldGrid",
    "kinetic_temperature",
    "cic_deposit",
    "y_averaged_profile",
    "temperature_profile",
    "seam_gradient",
    "fourier_mode",
    "sample_pairs",
    "pair_factorization_distance",
    "factorization_diagnostic",
    "factorization_null",
    "write_profile_csv",
    "write_mode_csv",
    "write_diagnostic_csv",
]

NUMBER_FORMAT = "{:.17e}"


class StatisticsError(ValueError):
    """Too few samples for a meaningful estimate."""


@dataclass(frozen=True)
class FieldGrid:
    """Node-centred field on ``[0, lx) x [0, ly)``; node ``(i, j)`` sits at ``(i lx/ng, j ly/ng)``."""

    values: np.ndarray
    lx: float
    ly: float
    quantity: str = "kinetic_energy_density"

    @property
    def ng(self) -> int:
        return self.values.shape[0]

    @property
    def cell_area(self) -> float:
        return (self.lx / self.values.shape[0]) * (self.ly / self.values.shape[1])

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.lx / self.values.shape[0]

    def total(self) -> float:
        """Integral of the field (sum of node values times cell area)."""
        return float(self.values.sum() * self.cell_area)


def _kinetic_energies(velocities):
    return 0.5 * np.sum(np.asarray(velocities, dtype=float) ** 2, axis=1)


def kinetic_temperature(system) -> float:
    """``sum |v|^2 / (2 n)`` for unit-mass particles in two dimensions."""
    v = np.asarray(system.velocities, dtype=float)
    if len(v) == 0:
        raise ValueError("empty system")
    return float(np.sum(v**2) / (2 * len(v)))


def cic_deposit(system, ng: int = 128) -> FieldGrid:
    """Bilinear (cloud-in-cell) deposition of ``|v|^2 / 2`` onto an ``ng x ng`` periodic grid.

    Node values are densities: summing them times the cell area returns the
    total kinetic energy.
    """
    if ng < 2:
        raise ValueError("ng must be at least 2")
    lx, ly = system.lx, system.ly
    pos = np.asarray(system.positions, dtype=float)
    energy = _kinetic_energies(system.velocities)
    gx = np.mod(pos[:, 0], lx) / lx * ng
    gy = np.mod(pos[:, 1], ly) / ly * ng
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    fx = gx - ix
    fy = gy - iy
    ix %= ng
    iy %= ng
    grid = np.zeros(ng * ng)
    for ox, wx in ((0, 1.0 - fx), (1, fx)):
        for oy, wy in ((0, 1.0 - fy), (1, fy)):
            flat = ((ix + ox) % ng) * ng + (iy + oy) % ng
            grid += np.bincount(flat, weights=energy * wx * wy, minlength=ng * ng)
    area = (lx / ng) * (ly / ng)
    return FieldGrid(grid.reshape(ng, ng) / area, lx, ly)


def y_averaged_profile(field: FieldGrid) -> np.ndarray:
    """Mean over y for each x column."""
    return field.values.mean(axis=1)


def temperature_profile(system, ng: int = 128, bins: int = 32) -> np.ndarray:
    """Local temperature along x: y-averaged CIC energy density, block-averaged, divided by density."""
    if ng % bins:
        raise ValueError("bins must divide ng")
    profile = y_averaged_profile(cic_deposit(system, ng))
    density = len(system.positions) / (system.lx * system.ly)
    return profile.reshape(bins, ng // bins).mean(axis=1) / density


def seam_gradient(profile: np.ndarray) -> float:
    """Mean absolute jump across the periodic edge and the centre of a profile."""
    half = len(profile) // 2
    return 0.5 * (abs(profile[0] - profile[-1]) + abs(profile[half] - profile[half - 1]))


def fourier_mode(system, n_x: int) -> complex:
    """``(1/2n) sum |v|^2 exp(-i k x)`` with ``k = 2 pi n_x / lx``, summed over particles."""
    if n_x < 0:
        raise ValueError("n_x must be nonnegative")
    v2 = np.sum(np.asarray(system.velocities, dtype=float) ** 2, axis=1)
    if n_x == 0:
        return complex(np.sum(v2) / (2 * len(v2)))
    k = 2 * np.pi * n_x / system.lx
    phase = np.exp(-1j * k * np.asarray(system.positions, dtype=float)[:, 0])
    return complex(np.sum(v2 * phase) / (2 * len(v2)))


def sample_pairs(n: int, max_pairs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Distinct unordered particle pairs drawn uniformly without replacement."""
    rng = np.random.default_rng(rng)
    total = n * (n - 1) // 2
    m = min(max_pairs, total)
    if m == total:
        flat = np.arange(total)
    else:
        flat = np.empty(0, np.int64)
        while len(flat) < m:
            draw = rng.integers(0, total, size=int(1.1 * (m - len(flat))) + 16)
            flat = np.unique(np.concatenate([flat, draw]))
        flat = rng.choice(flat, size=m, replace=False)
    # invert the row-major upper-triangle index
    i = (n - 2 - np.floor(np.sqrt(-8.0 * flat + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
    j = flat + i + 1 - n * (n - 1) // 2 + (n - i) * (n - i - 1) // 2
    return i, j


def pair_factorization_distance(first: np.ndarray, second: np.ndarray, bins: int = 16) -> float:
    """L2 distance between a symmetrized pair histogram and the product of its marginals.

    Histograms are probability tables on ``bins`` equal cells spanning
    ``[-max|v|, max|v|]``, so the value is unchanged by ``v -> -v``.
    """
    if bins < 8:
        raise ValueError("bins must be at least 8")
    if len(first) < 5 * bins * bins:
        raise StatisticsError(f"{len(first)} pairs are too few for {bins}x{bins} bins")
    edge = max(np.abs(first).max(), np.abs(second).max()) * (1 + 1e-12) or 1.0
    edges = np.linspace(-edge, edge, bins + 1)
    a = np.concatenate([first, second])
    b = np.concatenate([second, first])
    joint, _, _ = np.histogram2d(a, b, bins=(edges, edges))
    joint /= joint.sum()
    marginal = joint.sum(axis=1)
    return float(np.sqrt(np.sum((joint - np.outer(marginal, marginal)) ** 2)))


def _pair_components(system, bins, max_pairs, component, rng):
    v = np.asarray(system.velocities, dtype=float)[:, component]
    if len(v) < 100:
        raise StatisticsError("need at least 100 particles")
    i, j = sample_pairs(len(v), max_pairs, rng)
    return v[i], v[j]


def factorization_diagnostic(system, bins: int = 16, max_pairs: int = 1_000_000, component: int = 0,
                             rng=0) -> float:
    """Distance of the sampled two-particle velocity histogram from factorized form."""
    first, second = _pair_components(system, bins, max_pairs, component, rng)
    return pair_factorization_distance(first, second, bins)


def factorization_null(system, bins: int = 16, max_pairs: int = 1_000_000, component: int = 0, rng=0,
                       rounds: int = 20) -> tuple[float, float]:
    """Mean and standard deviation of the diagnostic after shuffling partner velocities.

    Uses the same pair sample as :func:`factorization_diagnostic` with the
    same ``rng``; shuffling destroys any pair correlation while keeping the
    one-particle distribution, which calibrates the shot-noise floor.
    """
    first, second = _pair_components(system, bins, max_pairs, component, rng)
    gen = np.random.default_rng([np.random.default_rng(rng).integers(2**63), rounds])
    vals = [pair_factorization_distance(first, gen.permutation(second), bins) for _ in range(rounds)]
    return float(np.mean(vals)), float(np.std(vals, ddof=1))


def _write_rows(path, header, rows, comment):
    with open(path, "w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([NUMBER_FORMAT.format(v) if isinstance(v, float) else v for v in row])


def write_profile_csv(path, x, profile, comment: str = ""):
    """Columns ``x, e_kin_y``."""
    _write_rows(path, ["x", "e_kin_y"], ((float(a), float(b)) for a, b in zip(x, profile)), comment)


def write_mode_csv(path, rows, comment: str = ""):
    """Rows of ``(t, n_x, amplitude)``; columns ``t, n_x, re, im, abs``."""
    _write_rows(path, ["t", "n_x", "re", "im", "abs"],
                ((float(t), int(nx), float(a.real), float(a.imag), float(abs(a))) for t, nx, a in rows), comment)


def write_diagnostic_csv(path, rows, comment: str = ""):
    """Rows of ``(t, value, null_floor)``."""
    _write_rows(path, ["t", "value", "null_floor"], ((float(t), float(v), float(f)) for t, v, f in rows), comment)
