"""Deterministic random streams built on the Philox counter-based generator.

Every stochastic component of a run (init, batching, noise, attack) owns its
own stream so that adding or removing one component never perturbs the draws
seen by another.  Same (seed, stream, call sequence) => identical output.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """A seeded random stream. Thin wrapper around numpy's Philox generator."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream: int) -> "Rng":
        """Derive an independent stream from the same seed."""
        return Rng(self.seed, stream)

    def uniform(self, low, high, size=None, dtype=np.float64):
        out = self._gen.uniform(low, high, size=size)
        return float(out) if size is None else out.astype(dtype, copy=False)

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=np.float64):
        out = self._gen.normal(loc, scale, size=size)
        return float(out) if size is None else out.astype(dtype, copy=False)

    def laplace(self, loc=0.0, scale=1.0, size=None, dtype=np.float64):
        out = self._gen.laplace(loc, scale, size=size)
        return float(out) if size is None else out.astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


# Fixed stream ids, so the purposes never collide across modules.
STREAM_INIT = 1
STREAM_BATCHING = 2
STREAM_DATA = 3
STREAM_DEFENSE = 4
STREAM_ATTACK = 5
STREAM_STUB = 6
