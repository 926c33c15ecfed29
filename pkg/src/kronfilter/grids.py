"""Grid shapes and the column-major vectorization convention.

Fields on a d1 x d2 grid are plain ``(d1, d2)`` float arrays. Their
vectorized form stacks columns (Fortran order), so the entry at row i,
column j of the field sits at position ``i + j*d1`` of the vector. Every
structured operator in this package is written against that convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class GridShape:
    """Rectangular grid dimensions.

    Attributes
    ----------
    d1 : int
        Number of rows (>= 2).
    d2 : int
        Number of columns (>= 2).
    """

    d1: int
    d2: int

    def __post_init__(self):
        if self.d1 < 2 or self.d2 < 2:
            raise DimensionError(f"grid must be at least 2 x 2, got {self.d1} x {self.d2}")

    @property
    def d(self) -> int:
        """Vectorized dimension d1 * d2."""
        return self.d1 * self.d2

    def as_tuple(self) -> tuple[int, int]:
        return (self.d1, self.d2)


def as_field(values, shape: GridShape | None = None) -> np.ndarray:
    """Coerce to a float field array, checking finiteness and optional shape."""
    U = np.asarray(values, dtype=float)
    if U.ndim != 2:
        raise DimensionError(f"field must be 2-D, got ndim={U.ndim}")
    if shape is not None and U.shape != shape.as_tuple():
        raise DimensionError(f"field shape {U.shape} does not match grid {shape.as_tuple()}")
    if not np.all(np.isfinite(U)):
        raise ValueError("field contains non-finite entries")
    return U


def vec(U: np.ndarray) -> np.ndarray:
    """Column-major stacking of a field into a length d1*d2 vector."""
    U = np.asarray(U, dtype=float)
    return U.reshape(-1, order="F")


def unvec(v: np.ndarray, shape: GridShape) -> np.ndarray:
    """Inverse of :func:`vec`; raises on length mismatch."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != shape.d:
        raise DimensionError(
            f"vector of length {v.size if v.ndim == 1 else v.shape} cannot fill a "
            f"{shape.d1} x {shape.d2} grid (need {shape.d})"
        )
    return v.reshape(shape.as_tuple(), order="F")
