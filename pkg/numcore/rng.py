"""
Seeded random streams.

Each `Rng` wraps numpy's PCG64 bit generator seeded from
SeedSequence([seed, crc32(purpose)]). Streams derived with `stream(name)`
depend only on (seed, purpose path), so data shuffling, weight init and
sampling stay independently reproducible no matter in which order they are
requested.
"""

from __future__ import annotations

import zlib
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from errors import ParameterError

Shape = Union[int, Tuple[int, ...], None]


class Rng:
    """Named PCG64 stream keyed by (seed, purpose)"""

    def __init__(self, seed: int, purpose: str = "root"):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.purpose = purpose
        key = zlib.crc32(purpose.encode("utf-8"))
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))

    def stream(self, name: str) -> "Rng":
        """Independent child stream for a named purpose"""
        return Rng(self.seed, f"{self.purpose}/{name}")

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, purpose={self.purpose!r})"

    # ------------------------------------------------------------------
    # Draws
    # ------------------------------------------------------------------

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Shape = None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: Shape = None) -> np.ndarray:
        return self._generator.normal(loc, scale, size)

    def standard_normal(self, size: Shape = None) -> np.ndarray:
        return self._generator.standard_normal(size)

    def integers(self, low: int, high: Optional[int] = None, size: Shape = None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def random_sign(self, size: Shape = None) -> np.ndarray:
        """Entries +1 or -1 with probability 1/2 each"""
        return np.where(self._generator.random(size) < 0.5, -1.0, 1.0)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, options: Sequence, size: Shape = None, replace: bool = True) -> np.ndarray:
        return self._generator.choice(options, size=size, replace=replace)

    def random(self, size: Shape = None) -> np.ndarray:
        return self._generator.random(size)
