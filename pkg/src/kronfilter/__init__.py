"""Kronecker-structured covariance estimation and ensemble Kalman filtering
for fields driven by Poisson-AR(1) and convection-diffusion dynamics."""

__version__ = "0.1.0"

from .grids import GridShape, vec, unvec
from .kronops import (
    KronExpansion,
    KronSumOperator,
    kron_prod_dense,
    kron_sum_apply,
    kron_sum_dense,
    kron_sum_eigvals,
    rearrange,
    rearrange_inverse,
    sylvester_solve,
)

__all__ = [
    "GridShape",
    "KronExpansion",
    "KronSumOperator",
    "kron_prod_dense",
    "kron_sum_apply",
    "kron_sum_dense",
    "kron_sum_eigvals",
    "rearrange",
    "rearrange_inverse",
    "sylvester_solve",
    "vec",
    "unvec",
    "__version__",
]
