"""Seeded hash families shared by the sketches.

All randomness in a sketch is derived from its integer seed, so two sites
given the same seed build structurally identical states. Scalar and numpy
code paths must agree bit for bit; the tests check that.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import xxhash

from .core import item_bytes

MASK64 = (1 << 64) - 1
# Polynomial families work over GF(2^31 - 1) so that every product fits in uint64.
MERSENNE_31 = (1 << 31) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(_GOLDEN)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seeds(seed: int, n: int) -> tuple[int, ...]:
    """Expand one user seed into ``n`` well-mixed 64-bit seeds."""
    out = []
    s = seed & MASK64
    for _ in range(n):
        s = splitmix64(s)
        out.append(s)
    return tuple(out)


def uniform(seed: int, counter: int) -> float:
    """Counter-based uniform draw in [0, 1); no generator state to persist."""
    return (splitmix64((seed ^ (counter * _GOLDEN)) & MASK64) >> 11) * (1.0 / (1 << 53))


def keys_of(items: Iterable) -> np.ndarray:
    return np.fromiter((xxhash.xxh64_intdigest(item_bytes(v)) for v in items), dtype=np.uint64)


class PolyHash:
    """k-wise independent family: a degree ``k-1`` polynomial over GF(2^31 - 1).

    Coefficients come from ``seed``; the leading coefficient is non-zero.
    Inputs are 64-bit item keys, reduced modulo the prime first.
    """

    __slots__ = ("coeffs",)

    def __init__(self, seed: int, k: int) -> None:
        raw = derive_seeds(seed, k)
        coeffs = [c % MERSENNE_31 for c in raw]
        if coeffs[0] == 0:
            coeffs[0] = 1
        self.coeffs = tuple(coeffs)

    def __call__(self, key: int) -> int:
        x = key % MERSENNE_31
        h = 0
        for c in self.coeffs:
            h = (h * x + c) % MERSENNE_31
        return h

    def many(self, keys: np.ndarray) -> np.ndarray:
        p = np.uint64(MERSENNE_31)
        x = np.asarray(keys, dtype=np.uint64) % p
        h = np.zeros_like(x)
        for c in self.coeffs:
            h = (h * x + np.uint64(c)) % p
        return h


def families(seeds: Sequence[int], k: int) -> list[PolyHash]:
    return [PolyHash(s, k) for s in seeds]
