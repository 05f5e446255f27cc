"""Counter-based, splittable random numbers.

Every random draw in the package goes through :class:`CounterRNG` so that
results are bit-identical across platforms, process pools and numpy
versions.  The generator is SplitMix64 used in counter mode::

    out(key, n) = mix64(key + (n + 1) * 0x9E3779B97F4A7C15)

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

(all arithmetic modulo 2**64).  A child stream for integer ``i`` has key
``mix64(key ^ mix64(i + 0xD1B54A32D192ED03))``; ``spawn(a, b, ...)`` folds the
ids left to right.  Uniform doubles use the top 53 bits
(``uniform32`` splits each output into two 32-bit halves, low half first);
normals use the Box-Muller transform on consecutive pairs of uniforms.
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MUL1 = np.uint64(0xBF58476D1CE4E5B9)
MUL2 = np.uint64(0x94D049BB133111EB)
SPLIT = np.uint64(0xD1B54A32D192ED03)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * MUL1
        z = (z ^ (z >> np.uint64(27))) * MUL2
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """Stateful view on a counter-based stream.

    Draws advance an internal counter, so two generators built from the same
    seed produce the same sequence regardless of where they run.
    """

    def __init__(self, seed: int = 0, *, _key: int | None = None):
        if _key is None:
            _key = int(mix64(np.array([int(seed) & _MASK], dtype=np.uint64))[0])
        self.key = _key
        self.counter = 0

    def __repr__(self) -> str:
        return f"CounterRNG(key=0x{self.key:016x}, counter={self.counter})"

    def spawn(self, *ids: int) -> "CounterRNG":
        """Independent child stream; does not consume from the parent."""
        key = np.array([self.key], dtype=np.uint64)
        for i in ids:
            salt = mix64(np.array([(int(i) + int(SPLIT)) & _MASK], dtype=np.uint64))
            key = mix64(key ^ salt)
        return CounterRNG(_key=int(key[0]))

    def bits(self, size: int) -> np.ndarray:
        n = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + n * GAMMA
        return mix64(z)

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1)."""
        size = int(np.prod(shape, dtype=np.int64))
        u = (self.bits(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def bits32(self, size: int) -> np.ndarray:
        """32-bit words; each 64-bit output yields two (low half first)."""
        b = self.bits((size + 1) // 2).astype("<u8")
        return b.view("<u4")[:size].astype(np.uint32)

    def uniform32(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1) with 32-bit resolution (see :meth:`bits32`)."""
        size = int(np.prod(shape, dtype=np.int64))
        return (self.bits32(size) * 2.0**-32).reshape(shape)

    def below32(self, n: int, shape=()) -> np.ndarray:
        """Integers in [0, n) as ``(w * n) >> 32`` on 32-bit words ``w``;
        equals ``floor(uniform32 * n)`` for every ``n < 2**21``."""
        size = int(np.prod(shape, dtype=np.int64))
        w = self.bits32(size).astype(np.uint64)
        return ((w * np.uint64(n)) >> np.uint64(32)).astype(np.int64).reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        half = (size + 1) // 2
        u = self.uniform((2 * half,))
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:size].reshape(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high) by scaling a uniform (bias < 2**-40 here)."""
        u = self.uniform(shape)
        out = np.floor(u * (high - low)).astype(np.int64) + low
        return np.minimum(out, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of uniforms with a stable sort is a deterministic shuffle
        return np.argsort(self.uniform((n,)), kind="stable")


def as_rng(seed) -> CounterRNG:
    if isinstance(seed, CounterRNG):
        return seed
    return CounterRNG(int(seed))
