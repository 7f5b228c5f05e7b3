"""Seeded, splittable random streams.

Every stochastic routine takes an :class:`RngHandle` instead of a bare
generator so that a run is a pure function of ``(inputs, seed, stream)``.
Streams are backed by numpy's counter-based Philox generator keyed through
a ``SeedSequence``; distinct ``(seed, stream)`` pairs give independent keys.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngHandle:
    seed: int
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream", int(self.stream) & _MASK64)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *path: int) -> "RngHandle":
        """Derive an independent sub-stream, e.g. ``h.child(trial, 3)``."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, *path))
        state = ss.generate_state(2, dtype=np.uint64)
        return RngHandle(int(state[0]), int(state[1]))


def as_generator(rng: "RngHandle | np.random.Generator | int") -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngHandle):
        return rng.generator()
    return RngHandle(int(rng)).generator()
