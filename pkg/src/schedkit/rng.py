"""Portable deterministic random numbers.

All sampling in this package flows through SplitMix64 streams so that a
seed produces the same draws on every platform and Python build. Streams
for parallel work are derived from (seed, *string tokens) via FNV-1a, so
per-target sampling never depends on iteration order.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash. Fixed seed, stable across runs."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int) -> tuple[int, int]:
    # Steele, Lea & Flood's SplitMix64 finalizer; one step per output.
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """SplitMix64 stream with the handful of draw kinds we need."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state, out = _splitmix64(self._state)
        return out

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Rejection-sampled, unbiased."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % n

    def choice(self, seq):
        if not seq:
            raise ValueError("choice on empty sequence")
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, seq, k: int) -> list:
        """k distinct elements, order given by partial Fisher-Yates."""
        if k > len(seq):
            raise ValueError("sample larger than population")
        pool = list(seq)
        out = []
        for _ in range(k):
            idx = self.randint(len(pool))
            out.append(pool.pop(idx))
        return out

    def weighted_choice(self, items, weights) -> object:
        """Pick items[i] with probability weights[i] / sum(weights)."""
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must sum to a positive value")
        r = self.uniform() * total
        acc = 0.0
        for item, w in zip(items, weights):
            acc += w
            if r < acc:
                return item
        return items[-1]

    def poisson(self, lam: float) -> int:
        """Knuth's product method; fine for the small means used here."""
        if lam < 0:
            raise ValueError("poisson mean must be >= 0")
        if lam == 0:
            return 0
        import math

        limit = math.exp(-lam)
        k = 0
        p = 1.0
        while True:
            p *= self.uniform()
            if p <= limit:
                return k
            k += 1


def derive(seed: int, *tokens: str) -> Rng:
    """Independent stream for (seed, tokens), stable across platforms."""
    state = seed & _MASK64
    for tok in tokens:
        state = (state ^ fnv1a64(tok.encode("utf-8"))) & _MASK64
        state, _ = _splitmix64(state)
    return Rng(state)
