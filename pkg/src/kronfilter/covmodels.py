"""Second-order models behind one interface: apply, solve, observed blocks.

Every variant exposes the covariance action ``Sigma @ v`` and the precision
action ``Sigma^{-1} @ v`` plus the submatrix extraction the filter's
analysis step needs. Structured variants work in factor space through
cached small eigendecompositions / Cholesky factors and never materialize
the d x d matrix; only the Dense variants do, under the size guard.

Variants
--------
DenseCov        Sigma itself (sample covariance baseline).
DensePrec       Omega itself (graphical lasso).
KPPrec          Omega = kron(B, A), Kronecker-product precision (KGlasso).
KSPrec          Omega = B ⊕ A, Kronecker-sum precision (TeraLasso).
SqKSPrec        Omega = (B ⊕ A)^2, squared Kronecker sum (SG-PALM).
KPExpCov        Sigma = sum_i kron(B_i, A_i), Kronecker expansion (KPCA).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spsla

from .errors import ConvergenceError, DimensionError
from .grids import GridShape
from .kronops import (
    DEFAULT_SIZE_GUARD,
    KronExpansion,
    KronSumOperator,
    check_size_guard,
)


def _as_columns(v: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        if v.size != d:
            raise DimensionError(f"vector length {v.size} != d {d}")
        return v[:, None], True
    if v.ndim == 2:
        if v.shape[0] != d:
            raise DimensionError(f"leading dimension {v.shape[0]} != d {d}")
        return v, False
    raise DimensionError(f"expected vector or matrix of columns, got ndim={v.ndim}")


def _fields(V: np.ndarray, shape: GridShape) -> np.ndarray:
    """(d, k) columns viewed as a (d1, d2, k) field stack, column-major."""
    return V.reshape(shape.d1, shape.d2, V.shape[1], order="F")


def _columns(F: np.ndarray, d: int) -> np.ndarray:
    return F.reshape(d, F.shape[2], order="F")


class CovModel:
    """Common surface of all second-order models."""

    kind = "abstract"

    def __init__(self, d: int, shape: GridShape | None = None):
        self.d = d
        self.shape = shape
        self.metadata: dict = {}

    # -- core actions -----------------------------------------------------

    def _apply_cols(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _solve_cols(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Sigma @ v for a vector or a matrix of column vectors."""
        V, single = _as_columns(v, self.d)
        out = self._apply_cols(V)
        return out[:, 0] if single else out

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} @ v for a vector or a matrix of column vectors."""
        V, single = _as_columns(v, self.d)
        out = self._solve_cols(V)
        return out[:, 0] if single else out

    # -- filter support ----------------------------------------------------

    def apply_basis(self, idx: np.ndarray) -> np.ndarray:
        """Sigma @ H^T for the 0/1 selection of the given indices: (d, m)."""
        idx = np.asarray(idx, dtype=int)
        E = np.zeros((self.d, idx.size))
        E[idx, np.arange(idx.size)] = 1.0
        return self._apply_cols(E)

    def observed_block(self, idx: np.ndarray) -> np.ndarray:
        """Sigma[idx, idx] as a dense (m, m) matrix."""
        idx = np.asarray(idx, dtype=int)
        return self.apply_basis(idx)[idx, :]

    # -- dense views (guarded) ----------------------------------------------

    def dense_sigma(self, guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
        check_size_guard(self.d, guard)
        return self._apply_cols(np.eye(self.d))

    def dense_precision(self, guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
        check_size_guard(self.d, guard)
        return self._solve_cols(np.eye(self.d))

    def structure_matrix(self, guard: int | None = DEFAULT_SIZE_GUARD):
        """(side, dense matrix) pair for structure dumps.

        Precision-parameterized models expose Omega ("precision"); the
        covariance-parameterized ones expose Sigma ("covariance").
        """
        return ("covariance", self.dense_sigma(guard))


class DenseCov(CovModel):
    """Plain dense covariance; solve adds a recorded ridge when singular."""

    kind = "dense_cov"

    def __init__(self, Sigma: np.ndarray, shape: GridShape | None = None):
        Sigma = np.asarray(Sigma, dtype=float)
        super().__init__(Sigma.shape[0], shape)
        self.Sigma = 0.5 * (Sigma + Sigma.T)
        self._chol = None
        self._ridge = None

    def _apply_cols(self, V):
        return self.Sigma @ V

    def _factorize(self):
        if self._chol is None:
            try:
                self._chol = sla.cho_factor(self.Sigma)
            except sla.LinAlgError:
                ridge = 1e-8 * np.trace(self.Sigma) / self.d
                if ridge <= 0:
                    ridge = 1e-8
                self._ridge = ridge
                self.metadata["solve_ridge"] = ridge
                self._chol = sla.cho_factor(self.Sigma + ridge * np.eye(self.d))
        return self._chol

    def _solve_cols(self, V):
        return sla.cho_solve(self._factorize(), V)

    def apply_basis(self, idx):
        return self.Sigma[:, np.asarray(idx, dtype=int)]

    def observed_block(self, idx):
        idx = np.asarray(idx, dtype=int)
        return self.Sigma[np.ix_(idx, idx)]

    def dense_sigma(self, guard=DEFAULT_SIZE_GUARD):
        return self.Sigma


class DensePrec(CovModel):
    """Plain dense precision (graphical lasso output)."""

    kind = "dense_prec"

    def __init__(self, Omega: np.ndarray, shape: GridShape | None = None):
        Omega = np.asarray(Omega, dtype=float)
        super().__init__(Omega.shape[0], shape)
        self.Omega = 0.5 * (Omega + Omega.T)
        self._chol = None

    def _factorize(self):
        if self._chol is None:
            self._chol = sla.cho_factor(self.Omega)
        return self._chol

    def _apply_cols(self, V):
        return sla.cho_solve(self._factorize(), V)

    def _solve_cols(self, V):
        return self.Omega @ V

    def dense_precision(self, guard=DEFAULT_SIZE_GUARD):
        return self.Omega

    def structure_matrix(self, guard=DEFAULT_SIZE_GUARD):
        return ("precision", self.Omega)


def _require_symmetric(M: np.ndarray, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    scale = np.abs(M).max(initial=0.0)
    if scale and np.abs(M - M.T).max() > 1e-10 * scale:
        raise ValueError(f"{name} factor must be symmetric")
    return 0.5 * (M + M.T)


class KPPrec(CovModel):
    """Kronecker-product precision Omega = kron(B, A), A and B SPD."""

    kind = "kp_prec"

    def __init__(self, A: np.ndarray, B: np.ndarray):
        A = _require_symmetric(A, "A")
        B = _require_symmetric(B, "B")
        shape = GridShape(A.shape[0], B.shape[0])
        super().__init__(shape.d, shape)
        self.A = A
        self.B = B
        self._Ainv = None
        self._Binv = None

    def _inverses(self):
        if self._Ainv is None:
            self._Ainv = sla.cho_solve(sla.cho_factor(self.A), np.eye(self.shape.d1))
            self._Binv = sla.cho_solve(sla.cho_factor(self.B), np.eye(self.shape.d2))
        return self._Ainv, self._Binv

    def _apply_cols(self, V):
        Ainv, Binv = self._inverses()
        F = _fields(V, self.shape)
        out = np.einsum("ij,jlk->ilk", Ainv, F)
        out = np.einsum("ijk,lj->ilk", out, Binv)
        return _columns(out, self.d)

    def _solve_cols(self, V):
        F = _fields(V, self.shape)
        out = np.einsum("ij,jlk->ilk", self.A, F)
        out = np.einsum("ijk,lj->ilk", out, self.B)
        return _columns(out, self.d)

    def apply_basis(self, idx):
        idx = np.asarray(idx, dtype=int)
        Ainv, Binv = self._inverses()
        i, j = idx % self.shape.d1, idx // self.shape.d1
        # Sigma e_(i,j) is the rank-1 field outer(Ainv[:,i], Binv[:,j])
        out = np.einsum("iq,jq->ijq", Ainv[:, i], Binv[:, j])
        return _columns(out, self.d)

    def observed_block(self, idx):
        idx = np.asarray(idx, dtype=int)
        Ainv, Binv = self._inverses()
        i, j = idx % self.shape.d1, idx // self.shape.d1
        return Ainv[np.ix_(i, i)] * Binv[np.ix_(j, j)]

    def dense_precision(self, guard=DEFAULT_SIZE_GUARD):
        check_size_guard(self.d, guard)
        return np.kron(self.B, self.A)

    def structure_matrix(self, guard=DEFAULT_SIZE_GUARD):
        return ("precision", self.dense_precision(guard))


class _EigKronSum(CovModel):
    """Shared plumbing for models diagonalized by the factor eigenbases."""

    power = 1  # Omega = L^power

    def __init__(self, A: np.ndarray, B: np.ndarray, weight_floor: float = 1e-12):
        A = _require_symmetric(A, "A")
        B = _require_symmetric(B, "B")
        shape = GridShape(A.shape[0], B.shape[0])
        super().__init__(shape.d, shape)
        self.op = KronSumOperator(A, B)
        self.A, self.B = self.op.A, self.op.B
        lam, self.QA = sla.eigh(self.A)
        mu, self.QB = sla.eigh(self.B)
        sums = lam[:, None] + mu[None, :]
        floor = weight_floor * max(1.0, np.abs(sums).max())
        small = np.abs(sums) < floor
        if np.any(small):
            self.metadata["eig_floor"] = int(small.sum())
            sums = np.where(small, np.where(sums < 0, -floor, floor), sums)
        self._sums = sums

    def _eig_weights_apply(self, V, weights):
        F = _fields(V, self.shape)
        W = np.einsum("ai,ajk->ijk", self.QA, F)
        W = np.einsum("ijk,jb->ibk", W, self.QB)
        W *= weights[:, :, None]
        out = np.einsum("ia,ajk->ijk", self.QA, W)
        out = np.einsum("ijk,bj->ibk", out, self.QB)
        return _columns(out, self.d)

    def _apply_cols(self, V):
        return self._eig_weights_apply(V, self._sums ** -self.power)

    def _solve_cols(self, V):
        F = _fields(V, self.shape)
        for _ in range(self.power):
            F = self.op.apply(F)
        return _columns(F, self.d)

    def apply_basis(self, idx):
        idx = np.asarray(idx, dtype=int)
        i, j = idx % self.shape.d1, idx // self.shape.d1
        # eigenbasis coordinates of a basis field e_i e_j^T are rank-1
        W = np.einsum("qa,qb->abq", self.QA[i, :], self.QB[j, :])
        W *= (self._sums ** -self.power)[:, :, None]
        out = np.einsum("ia,abq->ibq", self.QA, W)
        out = np.einsum("ibq,jb->ijq", out, self.QB)
        return _columns(out, self.d)

    def dense_precision(self, guard=DEFAULT_SIZE_GUARD):
        check_size_guard(self.d, guard)
        L = self.op.dense(guard)
        out = L
        for _ in range(self.power - 1):
            out = out @ L
        return out

    def structure_matrix(self, guard=DEFAULT_SIZE_GUARD):
        return ("precision", self.dense_precision(guard))


class KSPrec(_EigKronSum):
    """Kronecker-sum precision Omega = B ⊕ A (TeraLasso)."""

    kind = "ks_prec"
    power = 1


class SqKSPrec(_EigKronSum):
    """Squared-Kronecker-sum precision Omega = (B ⊕ A)^2 (SG-PALM)."""

    kind = "sqks_prec"
    power = 2


class KPExpCov(CovModel):
    """Kronecker-expansion covariance Sigma = sum_i kron(B_i, A_i) (KPCA).

    The expansion is used in symmetrized form. ``solve`` runs conjugate
    gradients on the factor-space apply (closed form when the expansion has
    a single SPD term); if a PSD clip was applied upstream the model carries
    the clipped dense covariance and dispatches to it.
    """

    kind = "kpexp_cov"

    def __init__(self, expansion: KronExpansion, dense_override: np.ndarray | None = None):
        super().__init__(expansion.shape.d, expansion.shape)
        self.expansion = expansion
        self._dense = None
        if dense_override is not None:
            self._dense = DenseCov(dense_override, expansion.shape)
            self.metadata["psd_clipped"] = True

    @property
    def rank(self) -> int:
        return self.expansion.rank

    def _apply_cols(self, V):
        if self._dense is not None:
            return self._dense._apply_cols(V)
        F = _fields(V, self.shape)
        return _columns(self.expansion.apply_field(F), self.d)

    def _solve_cols(self, V):
        if self._dense is not None:
            return self._dense._solve_cols(V)
        if self.rank == 1:
            A, B = self.expansion.terms[0]
            lamA, QA = sla.eigh(0.5 * (A + A.T))
            lamB, QB = sla.eigh(0.5 * (B + B.T))
            weights = lamA[:, None] * lamB[None, :]
            F = _fields(V, self.shape)
            W = np.einsum("ai,ajk->ijk", QA, F)
            W = np.einsum("ijk,jb->ibk", W, QB)
            W /= weights[:, :, None]
            out = np.einsum("ia,ajk->ijk", QA, W)
            out = np.einsum("ijk,bj->ibk", out, QB)
            return _columns(out, self.d)
        linop = spsla.LinearOperator(
            (self.d, self.d), matvec=lambda x: self.apply(x), dtype=float)
        out = np.empty_like(V)
        for k in range(V.shape[1]):
            x, info = spsla.cg(linop, V[:, k], rtol=1e-12, atol=0.0, maxiter=20 * self.d)
            if info != 0:
                raise ConvergenceError(
                    f"conjugate gradient failed on the Kronecker expansion (info={info})")
            out[:, k] = x
        return out

    def observed_block(self, idx):
        if self._dense is not None:
            return self._dense.observed_block(idx)
        idx = np.asarray(idx, dtype=int)
        i, j = idx % self.shape.d1, idx // self.shape.d1
        out = np.zeros((idx.size, idx.size))
        for A, B in self.expansion.terms:
            out += 0.5 * (A[np.ix_(i, i)] * B[np.ix_(j, j)]
                          + A.T[np.ix_(i, i)] * B.T[np.ix_(j, j)])
        return out

    def apply_basis(self, idx):
        if self._dense is not None:
            return self._dense.apply_basis(idx)
        idx = np.asarray(idx, dtype=int)
        i, j = idx % self.shape.d1, idx // self.shape.d1
        out = np.zeros((self.shape.d1, self.shape.d2, idx.size))
        for A, B in self.expansion.terms:
            out += 0.5 * np.einsum("iq,jq->ijq", A[:, i], B[:, j])
            out += 0.5 * np.einsum("iq,jq->ijq", A.T[:, i], B.T[:, j])
        return _columns(out, self.d)

    def dense_sigma(self, guard=DEFAULT_SIZE_GUARD):
        if self._dense is not None:
            return self._dense.Sigma
        return self.expansion.dense(guard)


def cov_apply(model: CovModel, v: np.ndarray) -> np.ndarray:
    """Sigma @ v through the model's structured path."""
    return model.apply(v)


def cov_solve(model: CovModel, v: np.ndarray) -> np.ndarray:
    """Sigma^{-1} @ v through the model's structured path."""
    return model.solve(v)
