"""Deterministic random number generation.

Every random decision in the pipeline (DAG-to-tree parent choice, leaf
sampling, parameter init, epoch shuffling) flows through a splitmix64
stream seeded from the run config, so results are reproducible across
runs and platforms. No ambient entropy is ever consulted.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once. Returns (new_state, output)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a child seed from a parent seed and a label path.

    Labels are mixed in via FNV-1a over their string form, so the result
    does not depend on Python's randomized str hash.
    """
    state = seed & _MASK64
    for label in labels:
        state, out = splitmix64(state ^ _fnv1a(str(label).encode("utf-8")))
        state = out
    _, out = splitmix64(state)
    return out


class Rng:
    """Sequential splitmix64 generator with the few draws we need."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randrange(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def sample(self, seq, k: int) -> list:
        """k distinct items, order-stable under a fixed seed."""
        if k > len(seq):
            raise ValueError("sample larger than population")
        pool = list(seq)
        self.shuffle(pool)
        return pool[:k]


def uniform_block(seed: int, n: int) -> np.ndarray:
    """First n uniforms of Rng(seed) as a float64 array.

    Bit-identical to calling Rng(seed).uniform() n times; splitmix64
    states form an arithmetic progression, so the whole block can be
    mixed at once.
    """
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
