"""Two-dimensional Langevin dynamics with exact time reversal.

Positions and per-step displacements ``v * dt`` live on a fixed binary lattice
of spacing ``2**-40``. Each kick is rounded to that lattice, so every addition
in the deterministic update is exact and the map is a bijection: negating the
velocities and stepping again retraces the trajectory bit for bit.
"""

import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .forces import NO_CAP, CellList, GeometryError, _all_pairs_forces, _cell_forces, compute_forces
from .potential import CUTOFF
from .rng import STREAM_NOISE, gaussian_pair

__all__ = [
    "MODES",
    "LATTICE_BITS",
    "quantize",
    "InitializationError",
    "BlowUpError",
    "DynamicsSpec",
    "ParticleSystem",
    "leapfrog_step",
    "run",
    "reverse_momenta",
    "lattice_positions",
    "random_positions",
    "make_system",
    "equilibrate",
    "join_systems",
]

MODES = ("deterministic", "grw_noise", "dissipative_grw")
LATTICE_BITS = 40
_SCALE = float(2**LATTICE_BITS)
_INV_SCALE = 1.0 / _SCALE
# coordinates stay below this so lattice sums remain exact in float64
_MAX_COORD = 2.0 ** (52 - LATTICE_BITS)

SEAM_OVERLAP = 0.8
SEAM_FORCE_CAP = 1e4


class InitializationError(RuntimeError):
    """Particles could not be placed at the requested density."""


class BlowUpError(FloatingPointError):
    """Non-finite force encountered during integration."""

    def __init__(self, step: int):
        super().__init__(f"non-finite force at step {step}")
        self.step = step


def quantize(values):
    """Round to the nearest multiple of ``2**-LATTICE_BITS``."""
    return np.rint(np.asarray(values, dtype=float) * _SCALE) * _INV_SCALE


@dataclass(frozen=True)
class DynamicsSpec:
    """Equation of motion for the particle gas.

    Parameters
    ----------
    mode : {"deterministic", "grw_noise", "dissipative_grw"}
    noise_amplitude : float
        Standard deviation of the white-noise force per unit ``sqrt(time)``.
    gamma : float
        Velocity damping rate (dissipative mode only).
    noise_temp : float
        Temperature the damping drives towards (dissipative mode only).
    dt : float
        Time step.
    cutoff : float
        Pair interaction cutoff.
    interacting : bool
        If False, pair forces are skipped (ideal gas).
    """

    mode: str = "deterministic"
    noise_amplitude: float = 0.0
    gamma: float = 0.0
    noise_temp: float = math.inf
    dt: float = 0.0025
    cutoff: float = CUTOFF
    interacting: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.noise_amplitude < 0 or self.gamma < 0:
            raise ValueError("noise amplitude and gamma must be nonnegative")
        if self.mode == "deterministic" and (self.noise_amplitude != 0 or self.gamma != 0):
            raise ValueError("deterministic mode requires zero noise amplitude and gamma")
        if self.mode == "grw_noise" and self.gamma != 0:
            raise ValueError("grw_noise mode has no damping; use dissipative_grw")
        if self.mode == "dissipative_grw":
            if not (self.noise_temp > 0 and math.isfinite(self.noise_temp)):
                raise ValueError("dissipative mode needs a finite positive noise temperature")
            expected = 2.0 * self.gamma * self.noise_temp
            if not math.isclose(self.noise_amplitude**2, expected, rel_tol=1e-9):
                raise ValueError("dissipative mode must satisfy amplitude**2 == 2 * gamma * noise_temp")
            if self.gamma * self.dt > 0.1:
                raise ValueError("gamma * dt must be small for the damped update")

    @classmethod
    def dissipative(cls, gamma: float, noise_temp: float, **kwargs) -> "DynamicsSpec":
        """Damped spec whose amplitude follows from the fluctuation-dissipation relation."""
        amp = math.sqrt(2.0 * gamma * noise_temp)
        return cls(mode="dissipative_grw", noise_amplitude=amp, gamma=gamma, noise_temp=noise_temp, **kwargs)

    @property
    def mode_code(self) -> int:
        return MODES.index(self.mode)

    @property
    def momentum_diffusion(self) -> float:
        """Momentum diffusion constant ``A**2 / 2``."""
        return 0.5 * self.noise_amplitude**2

    def with_(self, **changes) -> "DynamicsSpec":
        return replace(self, **changes)


@dataclass
class ParticleSystem:
    """Unit-mass particles in a periodic ``lx`` by ``ly`` box.

    Noise is a pure function of ``(seed, step, particle)``, so the per-particle
    random streams are fully described by ``seed`` and ``step``.
    """

    positions: np.ndarray
    velocities: np.ndarray
    lx: float
    ly: float
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    time: float = 0.0
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.array(self.velocities, dtype=float).reshape(-1, 2)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")
        # lattice-valued sides keep the periodic wrap exact
        self.lx = float(quantize(self.lx))
        self.ly = float(quantize(self.ly))
        if not (0 < self.lx < _MAX_COORD and 0 < self.ly < _MAX_COORD):
            raise GeometryError(f"box sides must lie in (0, {_MAX_COORD})")
        if not np.all(np.isfinite(self.velocities)):
            raise ValueError("velocities must be finite")
        self.positions = _wrap(self.positions, self.lx, self.ly)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def box_length(self) -> float:
        """Side of a square box; raises for rectangular boxes."""
        if self.lx != self.ly:
            raise GeometryError("box is not square")
        return self.lx

    @property
    def density(self) -> float:
        return self.n / (self.lx * self.ly)

    def kinetic_temperature(self) -> float:
        """``<|v|^2> / 2`` for unit mass in two dimensions."""
        return float(np.sum(self.velocities**2) / (2 * self.n))

    def net_momentum(self) -> np.ndarray:
        """Total momentum evaluated on the displacement lattice (exact integer sum)."""
        ticks = np.rint(self.velocities * self.dynamics.dt * _SCALE).astype(np.int64)
        return ticks.sum(axis=0) * _INV_SCALE / self.dynamics.dt

    def copy(self) -> "ParticleSystem":
        return replace(self, positions=self.positions.copy(), velocities=self.velocities.copy())

    def cells(self) -> CellList:
        return CellList(self.lx, self.ly, self.dynamics.cutoff)


def _wrap(positions, lx, ly):
    out = np.mod(positions, [lx, ly])
    # mod can round up to the box side
    out[out >= [lx, ly]] = 0.0
    return out


@nb.njit(cache=True)
def _wrap_coord(x, length):
    if x >= length:
        x -= length
    elif x < 0.0:
        x += length
    if x >= length or x < 0.0:
        x = x - length * np.floor(x / length)
        if x >= length:
            x = 0.0
    return x


@nb.njit(cache=True)
def _forces(pos, lx, ly, ncx, ncy, use_cells, cutoff, cap, interacting, f):
    if not interacting:
        f[:] = 0.0
    elif use_cells:
        _cell_forces(pos, lx, ly, ncx, ncy, cutoff, cap, f)
    else:
        _all_pairs_forces(pos, lx, ly, cutoff, cap, f)


@nb.njit(cache=True)
def _advance(pos, disp, f, lx, ly, ncx, ncy, use_cells, cutoff, cap, interacting,
             dt, nsteps, mode, amp, gamma, seed, step0):
    """Advance ``nsteps``; returns -1 or the index of the step that blew up."""
    n = pos.shape[0]
    half = 0.5 * dt * dt
    kick_noise = amp * np.sqrt(dt)
    _forces(pos, lx, ly, ncx, ncy, use_cells, cutoff, cap, interacting, f)
    for s in range(nsteps):
        for i in range(n):
            for d in range(2):
                disp[i, d] += np.rint(half * f[i, d] * _SCALE) * _INV_SCALE
            pos[i, 0] = _wrap_coord(pos[i, 0] + disp[i, 0], lx)
            pos[i, 1] = _wrap_coord(pos[i, 1] + disp[i, 1], ly)
        _forces(pos, lx, ly, ncx, ncy, use_cells, cutoff, cap, interacting, f)
        for i in range(n):
            for d in range(2):
                if not np.isfinite(f[i, d]):
                    return step0 + s
                disp[i, d] += np.rint(half * f[i, d] * _SCALE) * _INV_SCALE
        if mode > 0:
            for i in range(n):
                z0, z1 = gaussian_pair(seed, step0 + s, i, STREAM_NOISE)
                dv0 = kick_noise * z0
                dv1 = kick_noise * z1
                if mode == 2:
                    dv0 -= gamma * disp[i, 0]
                    dv1 -= gamma * disp[i, 1]
                # drift and noise rounded together so the small drift is dithered, not lost
                disp[i, 0] += np.rint(dv0 * dt * _SCALE) * _INV_SCALE
                disp[i, 1] += np.rint(dv1 * dt * _SCALE) * _INV_SCALE
    return -1


def run(system: ParticleSystem, nsteps: int, dynamics: DynamicsSpec | None = None,
        force_cap: float = NO_CAP) -> ParticleSystem:
    """Integrate ``nsteps`` kick-drift-kick steps in place and return the system.

    Positions are snapped to the lattice first (a no-op for states produced by
    this module). Stochastic modes add, after the second half kick, a velocity
    impulse ``A sqrt(dt) xi`` and, in dissipative mode, the damping ``-gamma v dt``.

    Raises
    ------
    BlowUpError
        If a force becomes non-finite; carries the global step index.
    """
    if nsteps < 0:
        raise ValueError("nsteps must be nonnegative")
    spec = dynamics or system.dynamics
    cells = CellList(system.lx, system.ly, spec.cutoff)
    ncx, ncy = cells.shape
    pos = np.ascontiguousarray(_wrap(quantize(system.positions), system.lx, system.ly))
    disp = quantize(system.velocities * spec.dt)
    f = np.zeros_like(pos)
    status = _advance(pos, disp, f, float(system.lx), float(system.ly), ncx, ncy, cells.uses_cells,
                      float(spec.cutoff), float(force_cap), spec.interacting, float(spec.dt), int(nsteps),
                      spec.mode_code, float(spec.noise_amplitude), float(spec.gamma),
                      np.uint64(system.seed), np.int64(system.step))
    if status >= 0:
        raise BlowUpError(int(status))
    system.positions = pos
    system.velocities = disp / spec.dt
    system.dynamics = spec
    system.time += nsteps * spec.dt
    system.step += nsteps
    return system


def leapfrog_step(system: ParticleSystem, dynamics: DynamicsSpec | None = None) -> ParticleSystem:
    """One integration step (see :func:`run`)."""
    return run(system, 1, dynamics)


def reverse_momenta(system: ParticleSystem) -> ParticleSystem:
    """Negate all velocities in place; positions, time and noise counters are untouched."""
    system.velocities = -system.velocities
    return system


def lattice_positions(n: int, lx: float, ly: float, jitter: float = 0.12, rng=None) -> np.ndarray:
    """Triangular lattice filling the box, with uniform jitter in units of the spacing."""
    rng = np.random.default_rng(rng)
    spacing = math.sqrt(2.0 * lx * ly / (math.sqrt(3.0) * n))
    cols = max(1, round(lx / spacing))
    rows = math.ceil(n / cols)
    i, j = np.meshgrid(np.arange(cols), np.arange(rows), indexing="ij")
    grid = np.column_stack([((i + 0.5 + 0.5 * (j % 2)) * lx / cols).ravel(), ((j + 0.5) * ly / rows).ravel()])[:n]
    grid += rng.uniform(-jitter, jitter, grid.shape) * spacing
    return _wrap(quantize(_wrap(grid, lx, ly)), lx, ly)


def random_positions(n: int, lx: float, ly: float, min_distance: float = SEAM_OVERLAP, rng=None,
                     max_attempts: int = 200) -> np.ndarray:
    """Random sequential insertion with a minimum pair distance.

    Raises
    ------
    InitializationError
        If some particle cannot be placed within ``max_attempts`` tries.
    """
    rng = np.random.default_rng(rng)
    pts = np.empty((n, 2))
    bins = max(1, int(lx // min_distance)), max(1, int(ly // min_distance))
    buckets: dict[tuple[int, int], list[int]] = {}
    for k in range(n):
        for _ in range(max_attempts):
            cand = rng.uniform((0, 0), (lx, ly))
            bx, by = int(cand[0] / lx * bins[0]) % bins[0], int(cand[1] / ly * bins[1]) % bins[1]
            near = [m for ox in (-1, 0, 1) for oy in (-1, 0, 1)
                    for m in buckets.get(((bx + ox) % bins[0], (by + oy) % bins[1]), ())]
            if near:
                delta = pts[near] - cand
                delta -= np.array([lx, ly]) * np.rint(delta / [lx, ly])
                if np.min(np.hypot(delta[:, 0], delta[:, 1])) < min_distance:
                    continue
            pts[k] = cand
            buckets.setdefault((bx, by), []).append(k)
            break
        else:
            raise InitializationError(f"could not insert particle {k} of {n}; use lattice placement")
    return _wrap(quantize(pts), lx, ly)


def make_system(n: int, lx: float, ly: float, sigma: float, seed: int = 0, placement: str = "lattice",
                jitter: float = 0.12, dynamics: DynamicsSpec | None = None) -> ParticleSystem:
    """Fresh system with Gaussian velocity components and exactly zero net momentum.

    Velocity components have standard deviation ``sigma`` and are shifted so
    that their lattice displacements sum to zero.
    """
    dynamics = dynamics or DynamicsSpec()
    rng = np.random.default_rng(seed)
    if placement == "lattice":
        pos = lattice_positions(n, lx, ly, jitter, rng)
    elif placement == "random":
        pos = random_positions(n, lx, ly, rng=rng)
    else:
        raise ValueError(f"unknown placement {placement!r}")
    vel = rng.normal(0.0, sigma, (n, 2))
    ticks = np.rint((vel - vel.mean(axis=0)) * dynamics.dt * _SCALE).astype(np.int64)
    for d in range(2):
        excess = int(ticks[:, d].sum())
        ticks[:, d] -= excess // n
        ticks[: excess % n, d] -= 1
    vel = ticks * _INV_SCALE / dynamics.dt
    return ParticleSystem(pos, vel, lx, ly, dynamics, seed=seed)


def equilibrate(system: ParticleSystem, target_sigma: float | None, steps: int, sample_every: int = 100,
                seed: int | None = None) -> tuple[ParticleSystem, float]:
    """Optionally redraw velocities, then run deterministic dynamics.

    Parameters
    ----------
    system : ParticleSystem
        Modified in place.
    target_sigma : float or None
        If given, velocities are redrawn with this per-component standard
        deviation and zero net momentum.
    steps : int
        Number of deterministic steps.
    sample_every : int
        Temperature sampling interval in steps.

    Returns
    -------
    system, temperature
        The temperature is the mean over the second half of the samples (or
        the final value if fewer than two samples were taken).
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if target_sigma is not None:
        fresh = make_system(system.n, system.lx, system.ly, target_sigma,
                            seed=system.seed if seed is None else seed, dynamics=system.dynamics)
        system.velocities = fresh.velocities
    spec = system.dynamics.with_(mode="deterministic", noise_amplitude=0.0, gamma=0.0)
    samples = []
    done = 0
    while done < steps:
        chunk = min(sample_every, steps - done)
        run(system, chunk, spec)
        done += chunk
        samples.append(system.kinetic_temperature())
    if len(samples) < 2:
        return system, system.kinetic_temperature()
    return system, float(np.mean(samples[len(samples) // 2:]))


def _resolve_overlaps(pos, lx, ly, threshold, n_left, max_iter=50):
    box = np.array([lx, ly])
    for _ in range(max_iter):
        pairs = cKDTree(pos, boxsize=box).query_pairs(threshold, output_type="ndarray")
        if len(pairs):
            pairs = pairs[(pairs[:, 0] < n_left) != (pairs[:, 1] < n_left)]
        if len(pairs) == 0:
            return pos
        i, j = pairs[:, 0], pairs[:, 1]
        delta = pos[i] - pos[j]
        delta -= box * np.rint(delta / box)
        r = np.maximum(np.hypot(delta[:, 0], delta[:, 1]), 1e-12)
        push = ((threshold - r) / 2 + 1e-3)[:, None] * delta / r[:, None]
        np.add.at(pos, i, push)
        np.add.at(pos, j, -push)
        pos = _wrap(quantize(_wrap(pos, lx, ly)), lx, ly)
    raise InitializationError("seam overlaps did not resolve")


def _relax_seams(pos, cells, seams, band, max_iter=100, step=1e-3, max_move=0.01):
    # capped steepest descent on particles near the seams; velocities are left alone
    near = np.zeros(len(pos), bool)
    for x0 in seams:
        dist = np.abs(pos[:, 0] - x0)
        near |= np.minimum(dist, cells.lx - dist) < band
    if not near.any():
        return pos
    for _ in range(max_iter):
        f = compute_forces(pos, cells, cap=SEAM_FORCE_CAP)
        mag = np.hypot(f[:, 0], f[:, 1])
        if mag[near].max() <= mag[~near].max(initial=0.0):
            break
        move = f[near] * step
        length = np.hypot(move[:, 0], move[:, 1])
        move *= np.minimum(1.0, max_move / np.maximum(length, 1e-300))[:, None]
        pos[near] += move
        pos = _wrap(quantize(_wrap(pos, cells.lx, cells.ly)), cells.lx, cells.ly)
    return pos


def join_systems(left: ParticleSystem, right: ParticleSystem) -> ParticleSystem:
    """Place ``right`` beside ``left`` along x in one periodic box.

    Cross-seam pairs closer than 0.8 are pushed apart symmetrically, then
    particles near the two seams relax by capped steepest descent on their
    positions. Velocities are copied unchanged and time restarts at zero.

    Raises
    ------
    GeometryError
        If heights, densities or time steps differ.
    """
    if left.ly != right.ly:
        raise GeometryError("boxes must have equal heights")
    if not math.isclose(left.density, right.density, rel_tol=1e-9):
        raise GeometryError("boxes must have equal densities")
    if left.dynamics.dt != right.dynamics.dt:
        raise GeometryError("systems must share the time step")
    lx = left.lx + right.lx
    ly = left.ly
    pos = np.vstack([left.positions, right.positions + [left.lx, 0.0]])
    pos = _wrap(quantize(pos), lx, ly)
    pos = _resolve_overlaps(pos, lx, ly, SEAM_OVERLAP, left.n)
    cells = CellList(lx, ly, left.dynamics.cutoff)
    pos = _relax_seams(pos, cells, seams=(0.0, left.lx), band=2 * left.dynamics.cutoff)
    vel = np.vstack([left.velocities, right.velocities])
    return ParticleSystem(pos, vel, lx, ly, left.dynamics, time=0.0, step=0, seed=left.seed)
