"""Cell-list force evaluation for the smoothed Lennard-Jones fluid.

Each particle sums its own interactions over the 3x3 block of neighbouring
cells in a fixed order. Pair forces are therefore computed twice (once per
partner) but every per-particle sum is independent of thread scheduling, so
results are bitwise identical for any thread count.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

from .potential import C2, C4, C6, C8, CUTOFF, C0

__all__ = ["GeometryError", "CellList", "compute_forces", "potential_energy", "NO_CAP"]

NO_CAP = np.inf


class GeometryError(ValueError):
    """Box too small for the interaction cutoff, or inconsistent geometry."""


@dataclass(frozen=True)
class CellList:
    """Cell decomposition of a rectangular periodic box.

    Cells are at least ``cutoff`` wide, so all partners of a particle lie in
    its own or the eight adjacent cells. The list is rebuilt on every force
    evaluation.
    """

    lx: float
    ly: float
    cutoff: float = CUTOFF

    def __post_init__(self):
        if self.lx <= 2 * self.cutoff or self.ly <= 2 * self.cutoff:
            raise GeometryError(f"box {self.lx} x {self.ly} must exceed twice the cutoff {self.cutoff}")

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.lx // self.cutoff), int(self.ly // self.cutoff)

    @property
    def uses_cells(self) -> bool:
        # a 3x3 stencil needs three distinct cells per direction
        return min(self.shape) >= 3

    def assign(self, positions: np.ndarray) -> np.ndarray:
        """Flat cell index of every particle."""
        ncx, ncy = self.shape
        cx = np.minimum((positions[:, 0] / (self.lx / ncx)).astype(np.int64), ncx - 1)
        cy = np.minimum((positions[:, 1] / (self.ly / ncy)).astype(np.int64), ncy - 1)
        return cx * ncy + cy


@nb.njit(inline="always")
def _pair_force_over_r(r2):
    ir2 = 1.0 / r2
    ir6 = ir2 * ir2 * ir2
    return (48.0 * ir6 * ir6 - 24.0 * ir6) * ir2 - (2.0 * C2 + r2 * (4.0 * C4 + r2 * (6.0 * C6 + r2 * 8.0 * C8)))


@nb.njit(inline="always")
def _pair_energy(r2):
    ir6 = 1.0 / (r2 * r2 * r2)
    return 4.0 * (ir6 * ir6 - ir6) + C0 + r2 * (C2 + r2 * (C4 + r2 * (C6 + r2 * C8)))


@nb.njit(cache=True)
def _sort_into_cells(pos, lx, ly, ncx, ncy):
    n = pos.shape[0]
    csx = lx / ncx
    csy = ly / ncy
    cell = np.empty(n, np.int64)
    start = np.zeros(ncx * ncy + 1, np.int64)
    for i in range(n):
        cx = int(pos[i, 0] / csx)
        cy = int(pos[i, 1] / csy)
        if cx >= ncx:
            cx = ncx - 1
        if cy >= ncy:
            cy = ncy - 1
        c = cx * ncy + cy
        cell[i] = c
        start[c + 1] += 1
    for c in range(ncx * ncy):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    order = np.empty(n, np.int64)
    for i in range(n):
        c = cell[i]
        order[fill[c]] = i
        fill[c] += 1
    xs = np.empty(n)
    ys = np.empty(n)
    for k in range(n):
        xs[k] = pos[order[k], 0]
        ys[k] = pos[order[k], 1]
    return start, order, xs, ys


@nb.njit(cache=True, parallel=True, fastmath=True, error_model="numpy")
def _cell_forces(pos, lx, ly, ncx, ncy, cutoff, cap, out):
    start, order, xs, ys = _sort_into_cells(pos, lx, ly, ncx, ncy)
    rc2 = cutoff * cutoff
    for c in nb.prange(ncx * ncy):
        cx = c // ncy
        cy = c - cx * ncy
        for a in range(start[c], start[c + 1]):
            xi = xs[a]
            yi = ys[a]
            fx = 0.0
            fy = 0.0
            for ddx in range(-1, 2):
                nx = cx + ddx
                sx = 0.0
                if nx < 0:
                    nx += ncx
                    sx = -lx
                elif nx >= ncx:
                    nx -= ncx
                    sx = lx
                for ddy in range(-1, 2):
                    ny = cy + ddy
                    sy = 0.0
                    if ny < 0:
                        ny += ncy
                        sy = -ly
                    elif ny >= ncy:
                        ny -= ncy
                        sy = ly
                    nc = nx * ncy + ny
                    for b in range(start[nc], start[nc + 1]):
                        if b == a:
                            continue
                        rx = xi - (xs[b] + sx)
                        ry = yi - (ys[b] + sy)
                        r2 = rx * rx + ry * ry
                        if r2 < rc2:
                            f = _pair_force_over_r(r2)
                            fx += f * rx
                            fy += f * ry
            mag2 = fx * fx + fy * fy
            if mag2 > cap * cap:
                s = cap / np.sqrt(mag2)
                fx *= s
                fy *= s
            out[order[a], 0] = fx
            out[order[a], 1] = fy


@nb.njit(cache=True, parallel=True)
def _all_pairs_forces(pos, lx, ly, cutoff, cap, out):
    n = pos.shape[0]
    rc2 = cutoff * cutoff
    for i in nb.prange(n):
        fx = 0.0
        fy = 0.0
        for j in range(n):
            if j == i:
                continue
            rx = pos[i, 0] - pos[j, 0]
            ry = pos[i, 1] - pos[j, 1]
            rx -= lx * np.rint(rx / lx)
            ry -= ly * np.rint(ry / ly)
            r2 = rx * rx + ry * ry
            if r2 < rc2:
                f = _pair_force_over_r(r2)
                fx += f * rx
                fy += f * ry
        mag2 = fx * fx + fy * fy
        if mag2 > cap * cap:
            s = cap / np.sqrt(mag2)
            fx *= s
            fy *= s
        out[i, 0] = fx
        out[i, 1] = fy


@nb.njit(cache=True)
def _energy_all_pairs(pos, lx, ly, cutoff):
    n = pos.shape[0]
    rc2 = cutoff * cutoff
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            rx = pos[i, 0] - pos[j, 0]
            ry = pos[i, 1] - pos[j, 1]
            rx -= lx * np.rint(rx / lx)
            ry -= ly * np.rint(ry / ly)
            r2 = rx * rx + ry * ry
            if r2 < rc2:
                total += _pair_energy(r2)
    return total


@nb.njit(cache=True)
def _energy_cells(pos, lx, ly, ncx, ncy, cutoff):
    start, order, xs, ys = _sort_into_cells(pos, lx, ly, ncx, ncy)
    rc2 = cutoff * cutoff
    total = 0.0
    for c in range(ncx * ncy):
        cx = c // ncy
        cy = c - cx * ncy
        for a in range(start[c], start[c + 1]):
            for ddx in range(-1, 2):
                nx = (cx + ddx) % ncx
                sx = lx if cx + ddx >= ncx else (-lx if cx + ddx < 0 else 0.0)
                for ddy in range(-1, 2):
                    ny = (cy + ddy) % ncy
                    sy = ly if cy + ddy >= ncy else (-ly if cy + ddy < 0 else 0.0)
                    nc = nx * ncy + ny
                    for b in range(start[nc], start[nc + 1]):
                        if b == a:
                            continue
                        rx = xs[a] - (xs[b] + sx)
                        ry = ys[a] - (ys[b] + sy)
                        r2 = rx * rx + ry * ry
                        if r2 < rc2:
                            total += 0.5 * _pair_energy(r2)
    return total


def compute_forces(positions: np.ndarray, cells: CellList, cap: float = NO_CAP, out: np.ndarray | None = None):
    """Forces on all particles; ``cap`` limits each particle's force magnitude."""
    pos = np.ascontiguousarray(positions, dtype=float)
    if out is None:
        out = np.empty_like(pos)
    if cells.uses_cells:
        ncx, ncy = cells.shape
        _cell_forces(pos, cells.lx, cells.ly, ncx, ncy, cells.cutoff, float(cap), out)
    else:
        _all_pairs_forces(pos, cells.lx, cells.ly, cells.cutoff, float(cap), out)
    return out


def potential_energy(positions: np.ndarray, cells: CellList) -> float:
    """Total pair energy (each pair counted once)."""
    pos = np.ascontiguousarray(positions, dtype=float)
    if cells.uses_cells:
        ncx, ncy = cells.shape
        return float(_energy_cells(pos, cells.lx, cells.ly, ncx, ncy, cells.cutoff))
    return float(_energy_all_pairs(pos, cells.lx, cells.ly, cells.cutoff))
