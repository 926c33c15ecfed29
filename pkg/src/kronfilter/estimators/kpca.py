"""Kronecker-expansion covariance approximation via rearrangement SVD.

The rearrangement operator maps sums of Kronecker products to low-rank
matrices, so the best rank-r Kronecker expansion of S in Frobenius norm is
the truncated SVD of rearrange(S). Terms are folded back into (A_i, B_i)
factor pairs; the reconstruction is used symmetrized, and positive
semidefiniteness is restored, when needed, by clipping negative eigenvalues
at zero (checked lazily through a Lanczos bound so the dense
eigendecomposition only runs when the truncation is materially indefinite).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spsla

from ..covmodels import KPExpCov
from ..errors import DimensionError
from ..grids import GridShape
from ..kronops import DEFAULT_SIZE_GUARD, KronExpansion, rearrange


def _truncated_svd(R: np.ndarray, k: int):
    """Deterministic top-k SVD of the rearranged matrix."""
    if min(R.shape) <= max(3 * k, 64):
        U, s, Vt = sla.svd(R, full_matrices=False)
        return U[:, :k], s[:k], Vt[:k, :]
    v0 = np.ones(min(R.shape)) / np.sqrt(min(R.shape))
    U, s, Vt = spsla.svds(R, k=k, v0=v0)
    order = np.argsort(s)[::-1]
    return U[:, order], s[order], Vt[order, :]


def kpca(S: np.ndarray, shape: GridShape, rank: int | None = None,
         svt: float | None = None, *, psd_tol: float = 1e-8,
         guard: int | None = DEFAULT_SIZE_GUARD) -> KPExpCov:
    """Kronecker expansion of a covariance matrix.

    Exactly one of ``rank`` (truncation order) or ``svt`` (singular value
    threshold on the rearranged spectrum) selects the terms kept.
    """
    S = np.asarray(S, dtype=float)
    d1, d2 = shape.d1, shape.d2
    max_rank = min(d1 * d1, d2 * d2)
    if (rank is None) == (svt is None):
        raise ValueError("specify exactly one of rank or svt")
    if rank is not None and not 1 <= rank <= max_rank:
        raise DimensionError(f"rank {rank} outside [1, {max_rank}]")
    R = rearrange(0.5 * (S + S.T), shape)

    if rank is not None:
        U, s, Vt = _truncated_svd(R, rank)
    else:
        if svt <= 0:
            raise ValueError("singular value threshold must be positive")
        k = min(8, max_rank)
        while True:
            U, s, Vt = _truncated_svd(R, k)
            if s.min() < svt or k == max_rank:
                break
            k = min(2 * k, max_rank)
        keep = s >= svt
        if not np.any(keep):
            keep = np.array([True] + [False] * (len(s) - 1))
        U, s, Vt = U[:, keep], s[keep], Vt[keep, :]

    terms = []
    for t in range(len(s)):
        w = np.sqrt(s[t])
        A = (w * U[:, t]).reshape(d1, d1, order="F")
        B = (w * Vt[t, :]).reshape(d2, d2, order="F")
        terms.append((A, B))
    expansion = KronExpansion(shape, terms)

    dense_override = None
    lam_min, lam_max = _extreme_eigs(expansion)
    if lam_min < -psd_tol * max(lam_max, 1e-300):
        Sig = expansion.dense(guard)
        w, V = sla.eigh(Sig)
        w_clipped = np.clip(w, 0.0, None)
        dense_override = (V * w_clipped) @ V.T

    model = KPExpCov(expansion, dense_override=dense_override)
    model.metadata.update(singular_values=s.tolist(), min_eig=float(lam_min))
    return model


def _extreme_eigs(expansion: KronExpansion) -> tuple[float, float]:
    """Smallest/largest eigenvalue of the symmetrized reconstruction."""
    d = expansion.shape.d
    if d <= 400:
        w = sla.eigvalsh(expansion.dense(guard=None))
        return float(w[0]), float(w[-1])
    shape = expansion.shape

    def mv(x):
        F = x.reshape(shape.d1, shape.d2, 1, order="F")
        return expansion.apply_field(F).reshape(d, order="F")

    op = spsla.LinearOperator((d, d), matvec=mv, dtype=float)
    v0 = np.ones(d) / np.sqrt(d)
    lo = spsla.eigsh(op, k=1, which="SA", v0=v0, return_eigenvectors=False)
    hi = spsla.eigsh(op, k=1, which="LA", v0=v0, return_eigenvectors=False)
    return float(lo[0]), float(hi[0])
