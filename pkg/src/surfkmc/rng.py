"""Deterministic splittable random streams.

Every stochastic component draws from a RandomSource identified by a seed
and a split path.  Splitting never advances the parent stream, so the
stream a trajectory sees depends only on (seed, path), not on how many
siblings ran before it or on scheduling.  Streams are counter-based
(Philox) under the numpy SeedSequence spawning scheme, which is stable
across platforms.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RandomSource:
    """A lazily instantiated Philox stream at (seed, path)."""

    seed: int
    path: tuple = ()
    _gen: object = field(default=None, repr=False, compare=False)

    def split(self, index):
        """Child source at path + (index,).  Does not touch this stream."""
        return RandomSource(self.seed, self.path + (int(index),))

    @property
    def generator(self):
        """The numpy Generator for this (seed, path), created on first use."""
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed,
                                        spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def uniform_block(self, n):
        """n doubles in [0, 1), advancing this stream."""
        return self.generator.random(n)

    def normal_block(self, shape):
        """Standard normals, advancing this stream."""
        return self.generator.standard_normal(shape)
