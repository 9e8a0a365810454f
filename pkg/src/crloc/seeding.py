"""Seed fan-out.

Every random quantity in the package is drawn from a numpy ``Generator``
(PCG64 bit generator, ziggurat normal transform) whose 64-bit seed is derived
from one base integer plus a tuple of non-negative integer keys by
``numpy.random.SeedSequence`` hashing.  The same (base, keys) always yields the
same stream, on any platform running the same numpy major version.
"""

from __future__ import annotations

import numpy as np

# key-space tags keeping independent streams disjoint
DOMAIN_TRAIN = 1
DOMAIN_VALIDATION = 2
DOMAIN_EVAL = 3
DOMAIN_PRECISION = 4
DOMAIN_INIT = 5
DOMAIN_SYNTH = 6
DOMAIN_FRAMES = 7


def derive_seed(base: int, *keys: int) -> int:
    """Hash ``base`` and ``keys`` into a 64-bit seed."""
    entropy = [int(base) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise ValueError("seed keys must be non-negative integers")
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def rng_for(base: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base, *keys)))
