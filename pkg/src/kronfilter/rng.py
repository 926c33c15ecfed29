"""Keyed random streams for schedule-independent reproducibility.

Every stochastic component draws from its own ``numpy`` Generator keyed by
(seed, namespace, *indices). Streams are independent of execution order, so
serial and parallel runs of the same configuration produce identical output.
"""

from __future__ import annotations

import numpy as np

# Stable namespace tags; changing these changes every sampled trajectory.
TRUTH = 1
INIT_ENSEMBLE = 2
OBSERVATION = 3
FORECAST = 4
ANALYSIS = 5
MASK = 6


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream keyed by (seed, *key)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))
