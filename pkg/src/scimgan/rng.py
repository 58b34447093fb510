"""Deterministic, portable random number generation.

All randomness in this project flows through :class:`Rng`, a counter-based
generator built on the splitmix64 mixing function.  The i-th output is a pure
function of (seed, i), so streams are reproducible bit-for-bit across runs and
platforms, state serializes as two integers, and blocks of samples can be
produced vectorized without changing the stream.

Stream derivation: ``rng.spawn(label, index)`` derives an independent child
stream from (seed, label, index).  Adding a new consumer with a fresh label
never shifts the samples seen by existing consumers.
"""

from __future__ import annotations

import numpy as np

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF

# FNV-1a 64-bit, used only to hash stream labels into seed material.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """splitmix64 finalizer: avalanche a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


class Rng:
    """Counter-based splitmix64 generator.

    Output i (1-based counter) is ``mix64(seed + i * GAMMA)``.  ``counter``
    records how many 64-bit words have been consumed; (seed, counter) is the
    complete state.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK
        self.counter = counter

    def __repr__(self):
        return f"Rng(seed={self.seed:#x}, counter={self.counter})"

    def spawn(self, label: str, index: int = 0) -> "Rng":
        """Derive an independent child stream from (seed, label, index)."""
        child = mix64(mix64(self.seed ^ _fnv1a(label.encode("utf-8"))) ^ (index & _MASK))
        return Rng(child)

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, state: tuple[int, int]) -> "Rng":
        return cls(state[0], state[1])

    # -- raw words ---------------------------------------------------------

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * _GAMMA) & _MASK)

    def _block(self, n: int) -> np.ndarray:
        """n raw 64-bit words, vectorized; identical to n next_u64 calls."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        return z

    # -- floats ------------------------------------------------------------

    def random(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float, size: int | None = None):
        u = self.random_array(size) if size is not None else self.random()
        return low + (high - low) * u

    def random_array(self, n: int) -> np.ndarray:
        return (self._block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, mu: float = 0.0, sigma: float = 1.0, size: int | None = None):
        """Gaussian via Box-Muller (cosine branch; two words per sample)."""
        n = 1 if size is None else size
        u = self.random_array(2 * n)
        u1 = np.maximum(u[:n], 2.0**-53)  # avoid log(0)
        u2 = u[n:]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        z = mu + sigma * z
        return float(z[0]) if size is None else z

    # -- integers and sequences ---------------------------------------------

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint requires n >= 1")
        return min(int(self.random() * n), n - 1)

    def choice(self, seq):
        if len(seq) == 0:
            raise ValueError("choice on empty sequence")
        return seq[self.randint(len(seq))]

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
