"""Counter-based SplitMix64 generator.

Every output is a pure function of ``(key, counter)``:

    z  = key + (counter + 1) * 0x9E3779B97F4A7C15        (mod 2**64)
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

which is exactly the sequence of the reference SplitMix64 started from
state ``key``. Independent substreams come from :func:`derive`, so work can
be split across threads (e.g. one stream per synthetic trial) without the
split changing any value.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64(key: int, counters: np.ndarray) -> np.ndarray:
    """Raw 64-bit outputs for the given counters under ``key``."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(np.uint64(key & _MASK) + (c + np.uint64(1)) * GAMMA)


def derive(seed: int, *path: int) -> int:
    """Child key for ``path`` (e.g. ``(trial_index,)``) under ``seed``.

    Each level hashes the parent key and the path element through one
    SplitMix64 output, so ``derive(s, i)`` and ``derive(s, j)`` are
    unrelated streams for ``i != j``.
    """
    key = int(seed) & _MASK
    for p in path:
        key = int(splitmix64(key ^ (int(p) & _MASK), np.zeros(1))[0])
    return key


class SplitMix64:
    """Sequential view over a counter-based stream.

    Parameters
    ----------
    key : int
        64-bit stream key (see :func:`derive`).
    """

    def __init__(self, key: int):
        self.key = int(key) & _MASK
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        out = splitmix64(self.key, np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in ``[0, 1)`` from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller, two uniforms per pair."""
        m = (n + 1) // 2
        bits = self.next_u64(2 * m) >> np.uint64(11)
        u1 = (bits[0::2].astype(np.float64) + 1.0) * _TWO_M53  # (0, 1]
        u2 = bits[1::2].astype(np.float64) * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]
