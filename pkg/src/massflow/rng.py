"""Reproducible random number streams.

All randomness in the package flows through counter-based Philox
generators.  A master seed plus a replica index define an independent
stream, so replicas can be simulated in any order (or in parallel
processes) and still produce bit-identical results.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "replica_rng"]


def make_rng(seed: int) -> np.random.Generator:
    """Return a Philox generator for a plain integer seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Return the generator for one replica of an ensemble.

    The stream is derived from ``(master_seed, replica)`` via a
    SeedSequence spawn key, so streams for different replicas are
    statistically independent and do not depend on how many replicas
    are run or in which order.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(replica,))
    return np.random.Generator(np.random.Philox(ss))
