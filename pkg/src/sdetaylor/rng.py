"""Seedable, cross-platform random streams for path simulation.

One xoshiro256** stream per path.  Stream p of a run with 64-bit seed s is
initialized from the SplitMix64 chain started at ``s + (p + 1) * GAMMA``:
its first four outputs become the xoshiro state (this is the documented
hash(seed, path-index) stream derivation).  Standard normals come from the
cosine-branch Box-Muller transform; every normal consumes exactly two 64-bit
outputs, so stream positions are a pure function of how many normals have
been drawn.  All state arithmetic is uint64 with wraparound, identical across
platforms.
"""

from __future__ import annotations

import numpy as np

__all__ = ["NormalStreams", "GAMMA"]

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_FIVE = np.uint64(5)
_NINE = np.uint64(9)
_D17 = np.uint64(17)
_TWO53 = float(2**53)


def _splitmix_out(x):
    """SplitMix64 output function for a uint64 array of chain states."""
    z = x.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _rotl(x, k):
    k = np.uint64(k)
    return (x << k) | (x >> (np.uint64(64) - k))


class NormalStreams:
    """Parallel per-path Gaussian streams.

    Args:
      seed: 64-bit run seed.
      n_paths: number of parallel streams.
      first_path: global index of the first stream; lets a single path be
        re-simulated bit-identically regardless of ensemble size.
    """

    def __init__(self, seed, n_paths, first_path=0):
        seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        idx = np.arange(first_path + 1, first_path + n_paths + 1, dtype=np.uint64)
        chain = seed + idx * GAMMA
        state = []
        for _ in range(4):
            chain = chain + GAMMA
            state.append(_splitmix_out(chain))
        # all-zero xoshiro state is invalid; SplitMix64 seeding cannot hit it
        # for all four words at once, but guard anyway
        dead = (state[0] | state[1] | state[2] | state[3]) == 0
        if np.any(dead):
            state[0] = np.where(dead, np.uint64(1), state[0])
        self._s = state
        self.n_paths = n_paths

    def _next_u64(self):
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * _FIVE, 7) * _NINE
        t = s1 << _D17
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def uniforms(self, count):
        """(n_paths, count) doubles strictly inside (0, 1)."""
        out = np.empty((self.n_paths, count))
        for c in range(count):
            bits = self._next_u64() >> np.uint64(11)
            out[:, c] = (bits.astype(np.float64) + 0.5) / _TWO53
        return out

    def normals(self, count):
        """(n_paths, count) i.i.d. standard normals; 2 uniforms per normal."""
        u = self.uniforms(2 * count)
        u1 = u[:, 0::2]
        u2 = u[:, 1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
