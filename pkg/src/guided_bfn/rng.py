"""Seeded random streams with draw accounting.

Every chain owns one :class:`SeededStream`. The stream wraps two independent
Philox generators derived from the chain seed: ``main`` feeds sender noise and
categorical draws, ``aux`` feeds guidance-only noise (Gumbel relaxation). Keeping
guidance noise off the main stream is what lets an unguided run and a guided run
with zero guidance scale consume identical main-stream variates.
"""

from __future__ import annotations

import numpy as np


class SeededStream:
    """Counter-tracked random stream for one sampling chain."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        main_seq, aux_seq = np.random.SeedSequence(self.seed).spawn(2)
        self._main = np.random.Generator(np.random.Philox(main_seq))
        self._aux = np.random.Generator(np.random.Philox(aux_seq))
        self.counter = 0
        self.aux_counter = 0

    @classmethod
    def for_chain(cls, base_seed: int, chain_index: int) -> "SeededStream":
        # chain i depends only on base + i, so adding chains never perturbs earlier ones
        return cls(int(base_seed) + int(chain_index))

    def normal(self, shape) -> np.ndarray:
        out = self._main.standard_normal(shape)
        self.counter += out.size
        return out

    def uniform(self, shape) -> np.ndarray:
        out = self._main.random(shape)
        self.counter += out.size
        return out

    def gumbel(self, shape) -> np.ndarray:
        out = self._aux.gumbel(size=shape)
        self.aux_counter += out.size
        return out

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """Draw one class index per row of ``probs`` by inverse CDF."""
        probs = np.asarray(probs, dtype=float)
        u = self.uniform(probs.shape[0])
        cdf = np.cumsum(probs, axis=1)
        cdf /= cdf[:, -1:]
        idx = (cdf < u[:, None]).sum(axis=1)
        return np.minimum(idx, probs.shape[1] - 1)


def as_stream(rng) -> SeededStream:
    """Accept a :class:`SeededStream` or an integer seed."""
    if isinstance(rng, SeededStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return SeededStream(int(rng))
    raise TypeError(f"expected SeededStream or int seed, got {type(rng).__name__}")
