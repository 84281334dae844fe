"""Deterministic pseudo-random streams for data generation, sampling and init.

Everything random in this package flows through a single generator family so
that a run is a pure function of its integer seeds.  The generator is
xoshiro256** seeded through splitmix64; both algorithms are fixed-width 64-bit
integer recurrences, so any implementation that follows the update rules below
reproduces the exact same draws:

* seeding: four successive splitmix64 outputs initialise the xoshiro state
* ``random()``: ``(next_u64() >> 11) * 2**-53``, a float64 in [0, 1)
* ``uniform(lo, hi)``: ``lo + (hi - lo) * random()``
* ``normal(mu, sd)``: one Box-Muller draw per call, consuming two uniforms
  ``u1, u2`` and returning ``mu + sd * sqrt(-2*ln(1-u1)) * cos(2*pi*u2)``
* ``randint(n)``: ``floor(random() * n)``
* ``shuffle``: Fisher-Yates from the last index down, ``j = randint(i + 1)``

Named child streams are derived with :func:`derive_seed`, which mixes the
parent seed with an FNV-1a hash of the labels; per-record streams therefore
depend only on (seed, record id), never on iteration order.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """FNV-1a hash of the UTF-8 encoding of ``text``, 64-bit."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, *labels: str | int) -> int:
    """Derive a child seed from a parent seed and a sequence of labels.

    Stable across runs and processes: labels are hashed with FNV-1a and folded
    into the seed through one splitmix64 step per label.
    """
    state = seed & _MASK64
    for label in labels:
        state ^= fnv1a64(str(label))
        state, _ = splitmix64(state)
    return state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** stream seeded via splitmix64.

    Not thread-safe; each unit of work owns its own instance.
    """

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float64 in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def normal(self, mu: float = 0.0, sd: float = 1.0) -> float:
        """One Box-Muller draw; consumes exactly two uniforms per call."""
        u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log1p(-u1))
        return mu + sd * r * math.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint needs a positive bound, got {n}")
        return int(self.random() * n)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items: list):
        return items[self.randint(len(items))]

    def uniform_array(self, lo: float, hi: float, shape: tuple[int, ...]) -> np.ndarray:
        """Array of uniform draws filled in C (row-major) order."""
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = self.uniform(lo, hi)
        return out

    def normal_array(self, mu: float, sd: float, shape: tuple[int, ...]) -> np.ndarray:
        """Array of Box-Muller draws filled in C (row-major) order."""
        out = np.empty(shape, dtype=np.float64)
        flat = out.reshape(-1)
        for i in range(flat.size):
            flat[i] = self.normal(mu, sd)
        return out


def spawn(seed: int, *labels: str | int) -> Xoshiro256StarStar:
    """Construct a generator for the child stream named by ``labels``."""
    return Xoshiro256StarStar(derive_seed(seed, *labels))
