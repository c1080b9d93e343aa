"""Binary checkpoints for particle systems and phase-space grids.

Little-endian layout::

    magic "CLMD" | version u32 | kind u32 | n u64 | L f64 | time f64 | dt f64
    | mode u32 | key u64 | step u64 | payload | trailer

Particle payload (kind 1): positions then velocities, each ``n x 2`` f64.
The trailer holds ``ly, noise_amplitude, gamma, noise_temp, cutoff`` as f64 so
rectangular boxes and stochastic dynamics round-trip; ``L`` is the box width.

Grid payload (kind 2): ``n`` is the number of x nodes, ``L`` the x span, and
the payload is ``n_p u64, x_min, x_max, p_min, p_max f64`` followed by the
``n x n_p`` values.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from .engine import MODES, DynamicsSpec, ParticleSystem

__all__ = ["CheckpointError", "FORMAT_VERSION", "save_particles", "load_particles", "save_grid", "load_grid",
           "file_hash"]

MAGIC = b"CLMD"
FORMAT_VERSION = 1
KIND_PARTICLES = 1
KIND_GRID = 2
_HEADER = struct.Struct("<4sIIQdddIQQ")
_TRAILER = struct.Struct("<5d")
_GRID_META = struct.Struct("<Q4d")


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def _read_header(buf: bytes, kind: int):
    if len(buf) < _HEADER.size:
        raise CheckpointError("file too short for header")
    magic, version, got_kind, n, length, time, dt, mode, key, step = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError("bad magic")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    if got_kind != kind:
        raise CheckpointError(f"payload kind {got_kind}, expected {kind}")
    return n, length, time, dt, mode, key, step


def save_particles(path, system: ParticleSystem) -> str:
    """Write ``system``; returns the SHA-256 of the file."""
    spec = system.dynamics
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, KIND_PARTICLES, system.n, system.lx, system.time, spec.dt,
                          spec.mode_code, system.seed, system.step)
    body = (np.ascontiguousarray(system.positions, "<f8").tobytes()
            + np.ascontiguousarray(system.velocities, "<f8").tobytes())
    trailer = _TRAILER.pack(system.ly, spec.noise_amplitude, spec.gamma, spec.noise_temp, spec.cutoff)
    data = header + body + trailer
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_particles(path) -> ParticleSystem:
    """Read a particle checkpoint written by :func:`save_particles`."""
    buf = Path(path).read_bytes()
    n, lx, time, dt, mode, key, step = _read_header(buf, KIND_PARTICLES)
    off = _HEADER.size
    need = off + 32 * n + _TRAILER.size
    if len(buf) != need:
        raise CheckpointError(f"expected {need} bytes, found {len(buf)}")
    if mode >= len(MODES):
        raise CheckpointError(f"unknown mode code {mode}")
    pos = np.frombuffer(buf, "<f8", 2 * n, off).reshape(n, 2).astype(float)
    vel = np.frombuffer(buf, "<f8", 2 * n, off + 16 * n).reshape(n, 2).astype(float)
    ly, amp, gamma, noise_temp, cutoff = _TRAILER.unpack_from(buf, off + 32 * n)
    spec = DynamicsSpec(mode=MODES[mode], noise_amplitude=amp, gamma=gamma, noise_temp=noise_temp, dt=dt,
                        cutoff=cutoff)
    system = ParticleSystem(pos, vel, lx, ly, spec, time=time, step=step, seed=key)
    if not (np.array_equal(system.positions, pos) and system.lx == lx and system.ly == ly):
        raise CheckpointError("stored state is not normalized")
    return system


def save_grid(path, grid, dt: float = 0.0, mode: int = 0, key: int = 0, step: int = 0) -> str:
    """Write a phase-space grid; returns the SHA-256 of the file."""
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, KIND_GRID, grid.nx, grid.x_max - grid.x_min, grid.time, dt, mode,
                          key, step)
    meta = _GRID_META.pack(grid.n_p, grid.x_min, grid.x_max, grid.p_min, grid.p_max)
    data = header + meta + np.ascontiguousarray(grid.values, "<f8").tobytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_grid(path):
    """Read a grid checkpoint; returns ``(grid, header)`` with header keys dt, mode, key, step."""
    from ..wigner import WignerGrid

    buf = Path(path).read_bytes()
    nx, _, time, dt, mode, key, step = _read_header(buf, KIND_GRID)
    off = _HEADER.size
    n_p, x_min, x_max, p_min, p_max = _GRID_META.unpack_from(buf, off)
    off += _GRID_META.size
    if len(buf) != off + 8 * nx * n_p:
        raise CheckpointError("grid payload size mismatch")
    values = np.frombuffer(buf, "<f8", nx * n_p, off).reshape(nx, n_p).astype(float)
    grid = WignerGrid(values, x_min, x_max, p_min, p_max, time)
    return grid, {"dt": dt, "mode": mode, "key": key, "step": step}


def file_hash(path) -> str:
    """SHA-256 hex digest of a file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
