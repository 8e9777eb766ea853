"""Seeded, splittable random streams.

Every stream is a Philox4x64-10 counter-based generator whose 128-bit key is
derived by :class:`numpy.random.SeedSequence` from ``(seed, *path)``. A path is
a tuple of non-negative integers or strings; strings are mapped to integers
with CRC-32 so that ``("simulate", 3)`` names the same stream on every
platform. Splitting never consumes state from the parent, so streams for
different files or pixels can be created in any order or in parallel.

Normal variates use numpy's ziggurat transform of the 64-bit uniform stream.
Poisson variates use numpy's algorithms: Knuth's multiplication method for
means below 10 and Hormann's PTRS transformed rejection above, both exact.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import DomainError

MASK64 = (1 << 64) - 1


def _path_word(p) -> int:
    if isinstance(p, str):
        return zlib.crc32(p.encode("utf-8"))
    p = int(p)
    if p < 0:
        raise DomainError(f"stream path elements must be non-negative, got {p}")
    return p


class SeededRng:
    """A single-owner random stream keyed by ``(seed, *path)``."""

    def __init__(self, seed: int = 0, *path):
        self.seed = int(seed) & MASK64
        self.path = tuple(path)
        entropy = [self.seed, *(_path_word(p) for p in self.path)]
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def split(self, *path) -> SeededRng:
        """Independent child stream; does not advance this one."""
        return SeededRng(self.seed, *self.path, *path)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={self.path})"

    def gaussian(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, shape=None, low=0.0, high=1.0):
        return self.generator.uniform(low, high, shape)

    def integers(self, low, high=None, shape=None):
        return self.generator.integers(low, high, size=shape)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, n, size, replace=True):
        return self.generator.choice(n, size=size, replace=replace)

    def poisson(self, mean):
        return poisson(self, mean)


def gaussian(rng: SeededRng, n) -> np.ndarray:
    """``n`` i.i.d. standard normal draws (``n`` may be a shape tuple)."""
    return rng.gaussian(n)


def poisson(rng: SeededRng, mean):
    """Exact Poisson draws; ``mean`` may be a scalar or an array of rates."""
    lam = np.asarray(mean, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise DomainError("Poisson mean must be finite")
    if np.any(lam < 0):
        raise DomainError("Poisson mean must be non-negative")
    out = rng.generator.poisson(lam)
    return out if lam.ndim else int(out)
