"""Observation-mask generation for partially observed grids."""

from __future__ import annotations

from .. import rng as rngmod
from ..enkf import MeasurementOperator
from ..grids import GridShape


def generate_mask(shape: GridShape, fraction: float, seed: int) -> MeasurementOperator:
    """Uniform without-replacement selection of round(fraction * d) entries."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    d = shape.d
    m = int(round(fraction * d))
    m = max(m, 1)
    gen = rngmod.substream(seed, rngmod.MASK)
    indices = gen.choice(d, size=m, replace=False)
    return MeasurementOperator(indices, d)
