"""Counter-based Gaussian noise for the stochastic integrators.

Philox4x64-10 (Salmon et al., SC'11) keyed by the run seed. Every random
number is a pure function of ``(seed, step, particle, stream)``, so the noise
a particle receives does not depend on iteration order or thread count.
"""

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53

STREAM_NOISE = 0


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _LO32) + (p2 & _LO32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 block; all arguments are ``uint64``."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def gaussian_pair(seed, step, particle, stream):
    """Two independent standard normals for one particle at one step (Box-Muller)."""
    x0, x1, _, _ = philox4x64(np.uint64(step), np.uint64(particle), np.uint64(stream), np.uint64(0),
                              np.uint64(seed), np.uint64(0))
    u1 = ((x0 >> _S11) + np.uint64(1)) * _TWO_M53
    u2 = (x1 >> _S11) * _TWO_M53
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


@nb.njit(cache=True)
def fill_gaussian(out, seed, step, stream):
    """Fill an ``(n, 2)`` array with the noise draws of ``step`` for particles ``0..n-1``."""
    for i in range(out.shape[0]):
        z0, z1 = gaussian_pair(seed, step, i, stream)
        out[i, 0] = z0
        out[i, 1] = z1


def philox_block(counter, key):
    """Python-level helper returning one Philox block as a ``uint64`` array."""
    c = [np.uint64(int(v)) for v in counter]
    k = [np.uint64(int(v)) for v in key]
    return np.array(philox4x64(c[0], c[1], c[2], c[3], k[0], k[1]), dtype=np.uint64)
