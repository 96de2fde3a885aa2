"""Counter-based pseudo-random streams for reproducible forest construction.

Every tree gets its own stream derived from (master seed, tree index), so
results do not depend on build order or thread count.  The generator is
splitmix64: output k of a stream with key s is mix64(s + (k+1)*GOLDEN),
which makes bulk generation a vectorized expression over a counter range.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a python int (mod 2^64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_key(key: int, index: int) -> int:
    """Child stream key for (key, index); avalanched so small indices differ."""
    return mix64((key ^ mix64((index + GOLDEN) & MASK64)) & MASK64)


class SplitMix:
    """Sequential view of a splitmix64 stream."""

    def __init__(self, key: int):
        self._state = key & MASK64

    def next64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def next_below(self, bound: int) -> int:
        """Integer in [0, bound) via the 64-bit multiply-shift map."""
        return mul_shift(self.next64(), bound)


def mul_shift(u: int, bound: int) -> int:
    # floor(u * bound / 2^64) without 128-bit arithmetic; bound < 2^32.
    uh = u >> 32
    ul = u & 0xFFFFFFFF
    return (uh * bound + ((ul * bound) >> 32)) >> 32


def stream_block(key: int, count: int, offset: int = 0) -> np.ndarray:
    """First `count` outputs (from `offset`) of stream `key`, vectorized."""
    ctr = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    z = np.uint64(key) + ctr * np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def mul_shift_vec(u: np.ndarray, bounds) -> np.ndarray:
    """Vectorized mul_shift; `bounds` scalar or array of ints < 2^32."""
    b = np.asarray(bounds, dtype=np.uint64)
    uh = u >> np.uint64(32)
    ul = u & np.uint64(0xFFFFFFFF)
    return (uh * b + ((ul * b) >> np.uint64(32))) >> np.uint64(32)
