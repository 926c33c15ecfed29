"""Kronecker-sum / Kronecker-product operators and Sylvester solves.

Conventions (fixed package-wide):

* ``vec`` is column-major (see :mod:`kronfilter.grids`).
* A factor pair ``(A, B)`` with A of size d1 x d1 and B of size d2 x d2
  acts on fields as ``U -> A @ U + U @ B.T``. Its dense matrix on
  vectorized fields is the Kronecker sum ``kron(B, I_d1) + kron(I_d2, A)``,
  so ``L @ vec(U) == vec(A @ U + U @ B.T)``.
* The matching Kronecker-product realization keeps the same factor roles:
  row factor A, column factor B, dense form ``kron(B, A)``.

Dense d x d materializations are guarded by ``DEFAULT_SIZE_GUARD`` to keep
accidental O(d^2) memory blowups out of tests; the factor-space routines
never form the d x d matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, SizeGuardError, SylvesterSingularError
from .grids import GridShape

DEFAULT_SIZE_GUARD = 4096

_SYM_TOL = 1e-12


def check_size_guard(d: int, guard: int | None = DEFAULT_SIZE_GUARD) -> None:
    """Raise SizeGuardError if a dense d x d matrix would exceed the cap."""
    if guard is not None and d > guard:
        raise SizeGuardError(d, guard)


def _is_symmetric(M: np.ndarray) -> bool:
    scale = np.abs(M).max()
    if scale == 0.0:
        return True
    return np.abs(M - M.T).max() <= _SYM_TOL * scale


def kron_prod_dense(A: np.ndarray, B: np.ndarray,
                    guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
    """Dense Kronecker product kron(A, B), guarded by output dimension."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    check_size_guard(A.shape[0] * B.shape[0], guard)
    return np.kron(A, B)


class KronSumOperator:
    """Factor pair (A, B) acting as U -> A U + U B^T on d1 x d2 fields.

    Spectral factorizations of A and B are computed lazily and cached, so a
    single operator instance amortizes eigen/Schur work across many solves
    (the filter reuses one operator for every member at every step).
    """

    def __init__(self, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"factor A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != B.shape[1]:
            raise DimensionError(f"factor B must be square, got {B.shape}")
        self.A = A
        self.B = B
        self.d1 = A.shape[0]
        self.d2 = B.shape[0]
        self.d = self.d1 * self.d2
        self._sym = _is_symmetric(A) and _is_symmetric(B)
        self._eig_cache = None
        self._schur_cache = None

    @property
    def shape(self) -> GridShape:
        return GridShape(self.d1, self.d2)

    @property
    def symmetric(self) -> bool:
        return self._sym

    def _check_field(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.shape[:2] != (self.d1, self.d2):
            raise DimensionError(
                f"field shape {U.shape} does not match operator grid "
                f"({self.d1}, {self.d2})"
            )
        return U

    def apply(self, U: np.ndarray) -> np.ndarray:
        """A @ U + U @ B.T without materializing the d x d matrix.

        Accepts a single (d1, d2) field or a stacked (d1, d2, k) batch.
        """
        U = self._check_field(U)
        if U.ndim == 2:
            return self.A @ U + U @ self.B.T
        # batch: contract over the field axes only
        return np.einsum("ij,jlk->ilk", self.A, U) + np.einsum("ijk,lj->ilk", U, self.B)

    def dense(self, guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
        """Dense Kronecker sum kron(B, I) + kron(I, A)."""
        check_size_guard(self.d, guard)
        return np.kron(self.B, np.eye(self.d1)) + np.kron(np.eye(self.d2), self.A)

    def factor_eigvals(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues of A and of B (cached; real arrays when symmetric)."""
        if self._eig_cache is None:
            if self._sym:
                lam = sla.eigvalsh(self.A)
                mu = sla.eigvalsh(self.B)
            else:
                lam = np.linalg.eigvals(self.A)
                mu = np.linalg.eigvals(self.B)
            self._eig_cache = (lam, mu)
        return self._eig_cache

    def eigvals(self) -> np.ndarray:
        """All d pairwise sums lambda_i(A) + mu_j(B), sorted.

        Sorted lexicographically by (real, imag); returned real when every
        imaginary part is negligible.
        """
        lam, mu = self.factor_eigvals()
        sums = (lam[:, None] + mu[None, :]).ravel()
        order = np.lexsort((sums.imag, sums.real)) if np.iscomplexobj(sums) \
            else np.argsort(sums, kind="stable")
        sums = sums[order]
        if np.iscomplexobj(sums) and np.abs(sums.imag).max(initial=0.0) <= 1e-12 * max(
                1.0, np.abs(sums.real).max(initial=0.0)):
            sums = sums.real
        return sums

    def opnorm_bound(self) -> float:
        """Cheap bound max|lambda| + max|mu| used to scale singularity tolerances."""
        lam, mu = self.factor_eigvals()
        return float(np.abs(lam).max(initial=0.0) + np.abs(mu).max(initial=0.0))

    def check_solvable(self, rtol: float = 1e-12) -> None:
        """Raise SylvesterSingularError if some eigenvalue pair sums to ~zero."""
        lam, mu = self.factor_eigvals()
        sums = np.abs(lam[:, None] + mu[None, :])
        i, j = np.unravel_index(np.argmin(sums), sums.shape)
        tol = rtol * self.opnorm_bound()
        if sums[i, j] <= tol:
            raise SylvesterSingularError(complex(lam[i]), complex(mu[j]), tol)

    def _sym_eig(self):
        if self._schur_cache is None or self._schur_cache[0] != "sym":
            lam, QA = sla.eigh(self.A)
            mu, QB = sla.eigh(self.B)
            self._schur_cache = ("sym", lam, QA, mu, QB)
        return self._schur_cache[1:]

    def _schur(self):
        if self._schur_cache is None or self._schur_cache[0] != "schur":
            TA, UA = sla.schur(self.A, output="real")
            SB, VB = sla.schur(self.B, output="real")
            trsyl = sla.get_lapack_funcs(("trsyl",), (TA, SB))[0]
            self._schur_cache = ("schur", TA, UA, SB, VB, trsyl)
        return self._schur_cache[1:]

    def solve(self, C: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
        """Solve A U + U B^T = C for U.

        Symmetric factors use two small eigendecompositions; the general
        path is Bartels-Stewart on the two Schur forms. Neither forms the
        d x d system. Raises SylvesterSingularError when the factor spectra
        are not separated (some lambda_i + mu_j ~ 0).
        """
        C = self._check_field(C)
        self.check_solvable(rtol=rtol)
        if self._sym:
            lam, QA, mu, QB = self._sym_eig()
            denom = lam[:, None] + mu[None, :]
            if C.ndim == 2:
                F = QA.T @ C @ QB
                return QA @ (F / denom) @ QB.T
            F = np.einsum("ai,ajk->ijk", QA, C)
            F = np.einsum("ijk,jb->ibk", F, QB)
            F /= denom[:, :, None]
            out = np.einsum("ia,ajk->ijk", QA, F)
            return np.einsum("ijk,bj->ibk", out, QB)
        TA, UA, SB, VB, trsyl = self._schur()
        single = C.ndim == 2
        Cs = C[:, :, None] if single else C
        out = np.empty_like(Cs)
        for k in range(Cs.shape[2]):
            F = UA.T @ Cs[:, :, k] @ VB
            Y, scale, info = trsyl(TA, SB, F, tranb="C")
            if info < 0:
                raise ValueError(f"illegal trsyl argument {-info}")
            out[:, :, k] = UA @ (Y / scale) @ VB.T
        return out[:, :, 0] if single else out


def kron_sum_apply(op: KronSumOperator, U: np.ndarray) -> np.ndarray:
    """Operator form of the Kronecker sum: A U + U B^T."""
    return op.apply(U)


def kron_sum_dense(op: KronSumOperator, guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
    return op.dense(guard)


def kron_sum_eigvals(op: KronSumOperator) -> np.ndarray:
    return op.eigvals()


def sylvester_solve(op: KronSumOperator, C: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Solve A U + U B^T = C (see KronSumOperator.solve)."""
    return op.solve(C, rtol=rtol)


def rearrange(S: np.ndarray, shape: GridShape) -> np.ndarray:
    """Kronecker rearrangement of a d x d matrix into a d1^2 x d2^2 matrix.

    A pure index permutation R with R(kron(B, A)) = outer(vec(A), vec(B)),
    so any matrix that is a sum of r Kronecker terms rearranges to a matrix
    of rank at most r. Inverse: :func:`rearrange_inverse`.
    """
    S = np.asarray(S, dtype=float)
    d1, d2 = shape.d1, shape.d2
    if S.shape != (shape.d, shape.d):
        raise DimensionError(f"matrix shape {S.shape} does not match grid d={shape.d}")
    S4 = S.reshape(d2, d1, d2, d1)          # [j, i, l, k] = S[j*d1+i, l*d1+k]
    return S4.transpose(3, 1, 2, 0).reshape(d1 * d1, d2 * d2)


def rearrange_inverse(R: np.ndarray, shape: GridShape) -> np.ndarray:
    """Undo :func:`rearrange`: map a d1^2 x d2^2 matrix back to d x d."""
    R = np.asarray(R, dtype=float)
    d1, d2 = shape.d1, shape.d2
    if R.shape != (d1 * d1, d2 * d2):
        raise DimensionError(
            f"matrix shape {R.shape} does not match rearranged dims ({d1 * d1}, {d2 * d2})"
        )
    R4 = R.reshape(d1, d1, d2, d2)          # [k, i, l, j]
    return R4.transpose(3, 1, 2, 0).reshape(shape.d, shape.d)


@dataclass
class KronExpansion:
    """Sum-of-Kronecker-products representation Sigma = sum_i kron(B_i, A_i).

    ``terms`` holds (A_i, B_i) pairs with A_i of size d1 x d1 (row factor)
    and B_i of size d2 x d2 (column factor). Used as a covariance the
    reconstruction is symmetrized: apply averages each term with its
    transpose, which is exact for symmetric factors.
    """

    shape: GridShape
    terms: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.terms) < 1:
            raise ValueError("expansion needs at least one term")
        for A, B in self.terms:
            if A.shape != (self.shape.d1, self.shape.d1):
                raise DimensionError(f"row factor shape {A.shape} != d1 {self.shape.d1}")
            if B.shape != (self.shape.d2, self.shape.d2):
                raise DimensionError(f"column factor shape {B.shape} != d2 {self.shape.d2}")

    @property
    def rank(self) -> int:
        return len(self.terms)

    def apply_field(self, V: np.ndarray) -> np.ndarray:
        """Symmetrized action on a field (or (d1, d2, k) batch of fields)."""
        out = np.zeros_like(V)
        for A, B in self.terms:
            if V.ndim == 2:
                out += 0.5 * (A @ V @ B.T + A.T @ V @ B)
            else:
                out += 0.5 * (np.einsum("ij,jlk,ml->imk", A, V, B)
                              + np.einsum("ji,jlk,lm->imk", A, V, B))
        return out

    def dense(self, guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
        """Symmetrized dense reconstruction sum_i kron(B_i, A_i)."""
        check_size_guard(self.shape.d, guard)
        S = np.zeros((self.shape.d, self.shape.d))
        for A, B in self.terms:
            S += np.kron(B, A)
        return 0.5 * (S + S.T)
