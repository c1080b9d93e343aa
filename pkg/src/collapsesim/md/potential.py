"""Smoothed Lennard-Jones pair potential in reduced units.

The plain 12-6 potential is shifted by an even polynomial of degree eight whose
coefficients make the potential and its first four derivatives vanish at the
cutoff.
"""

import math

import numpy as np
from numpy.polynomial import Polynomial

CUTOFF = 3.5
C0 = 7.5910165343877297e-02
C2 = -1.8581547966307284e-02
C4 = 1.8195943357253561e-03
C6 = -8.2498747696767786e-05
C8 = 1.4428113900989101e-06
OVERLAP_DISTANCE = 0.5

SMOOTHING = Polynomial([C0, 0.0, C2, 0.0, C4, 0.0, C6, 0.0, C8])


def _check_positive(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(~np.isfinite(r)):
        raise ValueError("pair distance must be positive and finite")
    return r


def smoothed_lj_pair(r, diagnostics: dict | None = None):
    """Pair energy and radial force ``-dU/dr`` at distance ``r``.

    Both are zero beyond :data:`CUTOFF`. If a ``diagnostics`` dict is given,
    the number of distances below :data:`OVERLAP_DISTANCE` is added to its
    ``"overlaps"`` entry.
    """
    r = _check_positive(r)
    if diagnostics is not None:
        diagnostics["overlaps"] = diagnostics.get("overlaps", 0) + int(np.count_nonzero(r < OVERLAP_DISTANCE))
    inside = r <= CUTOFF
    ir6 = r**-6.0
    energy = 4.0 * (ir6 * ir6 - ir6) + SMOOTHING(r)
    force = (48.0 * ir6 * ir6 - 24.0 * ir6) / r - SMOOTHING.deriv(1)(r)
    return np.where(inside, energy, 0.0), np.where(inside, force, 0.0)


def smoothed_lj_derivative(r, order: int):
    """Exact ``order``-th radial derivative of the pair energy inside the cutoff."""
    r = _check_positive(r)
    if order == 0:
        return smoothed_lj_pair(r)[0]

    def power_term(m):
        # d^k/dr^k r^-m
        return (-1) ** order * math.prod(range(m, m + order)) * r ** (-m - order)

    val = 4.0 * (power_term(12) - power_term(6)) + SMOOTHING.deriv(order)(r)
    return np.where(r <= CUTOFF, val, 0.0)
