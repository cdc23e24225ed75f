"""Seeding helpers.

Every random stream in the package is a ``numpy.random.PCG64`` generator.
Per-item streams are derived with :func:`mix`, a SplitMix64 finalizer over
``seed`` and ``index``, so document ``i`` of a corpus does not depend on how
many documents are generated or in which order.
"""

from __future__ import annotations

import numpy as np

RNG_ID = "numpy.PCG64+splitmix64-mix"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix(seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for stream ``index`` of ``seed``."""
    return _splitmix64(_splitmix64(seed & _MASK) ^ (index & _MASK))


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & _MASK))


class UniformStream:
    """Buffered uniform draws from a PCG64 generator.

    Draws are consumed strictly in order, so the sequence of choices is a
    pure function of the seed regardless of buffer size.
    """

    __slots__ = ("_gen", "_buf", "_pos", "_block")

    def __init__(self, seed: int, block: int = 4096):
        self._gen = generator(seed)
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def below(self, k: int) -> int:
        """Uniform integer in ``[0, k)``."""
        i = int(self.uniform() * k)
        return i if i < k else k - 1
