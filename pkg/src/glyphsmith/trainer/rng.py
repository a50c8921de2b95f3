"""SplitMix64 and the data split built on it.

Pure integer arithmetic so shuffles agree bit for bit across platforms
and numpy versions.
"""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple, TypeVar

T = TypeVar("T")

_MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Integer in ``[0, n)`` by plain modulo reduction."""
        return self.next() % n

    def uniform(self) -> float:
        """Float in ``[0, 1)`` from the top 53 bits."""
        return (self.next() >> 11) * (1.0 / (1 << 53))


def shuffle(items: Sequence[T], rng: SplitMix64) -> List[T]:
    """Fisher-Yates, walking down from the last index."""
    out = list(items)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def split(items: Sequence[T], ratio: float = 0.8, seed: int = 30) -> Tuple[List[T], List[T]]:
    """Shuffle with ``seed`` and cut at ``ceil(ratio * n)``."""
    if len(items) < 2:
        raise ValueError("need at least 2 items to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be inside (0, 1)")
    order = shuffle(items, SplitMix64(seed))
    # guard against 0.8 * 10 landing a hair above 8
    cut = math.ceil(ratio * len(order) - 1e-9)
    cut = min(max(cut, 1), len(order) - 1)
    return order[:cut], order[cut:]
