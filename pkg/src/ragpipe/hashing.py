"""Portable hashing and random number generation.

Everything that has to be reproducible across platforms and Python versions
(split assignment, feature hashing, span sampling, synthetic corpora) goes
through these two primitives rather than ``random`` or ``numpy.random``.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a of ``data`` (strings are UTF-8 encoded)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def mix64(z: int) -> int:
    """SplitMix64 finalizer; full avalanche over 64 bits."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def seeded_hash(seed: int, key: str) -> int:
    """FNV-1a over the 8-byte little-endian seed followed by ``key``, then mixed.

    Plain FNV-1a barely diffuses a change in the leading seed bytes, so two
    seeds would otherwise rank ids almost identically.
    """
    return mix64(fnv1a64((seed & MASK64).to_bytes(8, "little") + key.encode("utf-8")))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class SplitMix64:
    """Counter-based SplitMix64 generator.

    The state is a single 64-bit counter advanced by the golden-ratio
    increment; each output is a fixed bijective mix of the counter. The stream
    for a given seed is therefore identical on every platform.
    """

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def poisson(self, lam: float) -> int:
        """Poisson variate by CDF inversion (fine for the small rates used here)."""
        return poisson_inverse_cdf(self.random(), lam)


def poisson_inverse_cdf(u: float, lam: float, kmax: int = 10_000) -> int:
    """Smallest k with P(X <= k) > u for X ~ Poisson(lam)."""
    p = math.exp(-lam)
    cdf = p
    k = 0
    while cdf <= u and k < kmax:
        k += 1
        p *= lam / k
        cdf += p
    return k
