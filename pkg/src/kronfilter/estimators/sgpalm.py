"""Squared-Kronecker-sum precision estimation Omega = (B ⊕ A)^2.

Fits the Sylvester generative model A U + U B^T = Z (Z white) by its
pseudolikelihood: with L = B ⊕ A and x the vectorized field,

    F(A, B) = - sum_t log L_tt + (1/2N) sum_n ||L x_n||^2
              + lam (||A||_1,off + ||B||_1,off),

minimized by proximal alternating linearized minimization: a proximal
gradient step on A with B held fixed, then on B, each with its own
backtracking line search. L_tt = A_ii + B_jj, so the log barrier keeps
every diagonal pair sum positive; all quadratic terms reduce to
factor-sized contractions of the field stack. Objective is non-increasing
on every accepted step.

Like the Kronecker-sum model, (A + cI, B - cI) leaves the objective
unchanged; returned factors equalize mean traces.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..covmodels import SqKSPrec
from ..errors import ConvergenceError
from ..grids import GridShape


def _soft_off(M, t):
    out = np.sign(M) * np.maximum(np.abs(M) - t, 0.0)
    np.fill_diagonal(out, np.diag(M))
    return out


def _penalty(A, B, lam):
    offA = np.abs(A).sum() - np.abs(np.diag(A)).sum()
    offB = np.abs(B).sum() - np.abs(np.diag(B)).sum()
    return lam * (offA + offB)


class _State:
    """Smooth objective pieces at (A, B) for a field stack U (d1, d2, N)."""

    def __init__(self, A, B, U):
        self.A, self.B, self.U = A, B, U
        self.n = U.shape[2]
        self.diag_sums = np.diag(A)[:, None] + np.diag(B)[None, :]
        if self.diag_sums.min() <= 0:
            self.value = np.inf
            self.V = None
            return
        self.V = np.einsum("ij,jln->iln", A, U) + np.einsum("ijn,lj->iln", U, B)
        quad = 0.5 * np.sum(self.V * self.V) / self.n
        self.value = float(-np.log(self.diag_sums).sum() + quad)

    def grad_A(self):
        g = np.einsum("iln,kln->ik", self.V, self.U) / self.n
        g = 0.5 * (g + g.T)
        g[np.diag_indices_from(g)] -= (1.0 / self.diag_sums).sum(axis=1)
        return g

    def grad_B(self):
        g = np.einsum("ijn,iln->jl", self.V, self.U) / self.n
        g = 0.5 * (g + g.T)
        g[np.diag_indices_from(g)] -= (1.0 / self.diag_sums).sum(axis=0)
        return g


def sg_palm(X_rows: np.ndarray, shape: GridShape, lam: float, *,
            tol: float = 1e-7, max_iter: int = 2000,
            init_factors: tuple | None = None, strict: bool = True) -> SqKSPrec:
    """Sylvester pseudolikelihood estimate from centered data rows (N, d).

    Stops when the relative objective decrease over a full (A, B) sweep
    falls below tol; raises ConvergenceError on line-search failure or when
    max_iter sweeps do not reach tolerance (unless strict=False, which
    warns and returns the last sweep's factors). ``init_factors`` warm-
    starts the blocks, which the filter loop uses across time steps.
    """
    X = np.asarray(X_rows, dtype=float)
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    n, d = X.shape
    if d != shape.d:
        raise ValueError(f"row length {d} does not match grid d={shape.d}")
    U = X.T.reshape(shape.d1, shape.d2, n, order="F")

    # scale-matched diagonal init: c minimizing the objective over A = B = cI
    msq = np.sum(U * U) / n
    c0 = np.sqrt(shape.d / max(4.0 * msq, 1e-300))
    A = c0 * np.eye(shape.d1)
    B = c0 * np.eye(shape.d2)
    if init_factors is not None:
        A_w = 0.5 * (init_factors[0] + init_factors[0].T)
        B_w = 0.5 * (init_factors[1] + init_factors[1].T)
        if (np.diag(A_w)[:, None] + np.diag(B_w)[None, :]).min() > 0:
            A, B = A_w, B_w
    st = _State(A, B, U)
    obj = st.value + _penalty(A, B, lam)
    trace = [obj]

    eta_A = eta_B = 1.0 / max(msq, 1.0)
    prev = {"A": None, "B": None}  # (iterate, gradient) per block for BB steps

    def block_step(M, grad, eta, other_fixed, is_A):
        key = "A" if is_A else "B"
        if prev[key] is not None:
            dM, dG = M - prev[key][0], grad - prev[key][1]
            denom = np.sum(dM * dG)
            if denom > 0:
                eta = max(np.sum(dM * dM) / denom, 1e-14)
        prev[key] = (M, grad)
        for _ in range(80):
            cand = _soft_off(M - eta * grad, eta * lam)
            cand = 0.5 * (cand + cand.T)
            st_c = _State(cand, other_fixed, U) if is_A else _State(other_fixed, cand, U)
            if np.isfinite(st_c.value):
                delta = cand - M
                bound = (st.value + np.sum(grad * delta)
                         + np.sum(delta * delta) / (2 * eta))
                if st_c.value <= bound + 1e-12 * abs(bound):
                    return cand, st_c, eta
            eta *= 0.5
        return None, None, eta

    for sweep in range(1, max_iter + 1):
        A_new, st_new, eta_A = block_step(A, st.grad_A(), eta_A, B, True)
        if A_new is None:
            raise ConvergenceError(f"A-block line search failed at sweep {sweep}")
        A, st = A_new, st_new
        B_new, st_new, eta_B = block_step(B, st.grad_B(), eta_B, A, False)
        if B_new is None:
            raise ConvergenceError(f"B-block line search failed at sweep {sweep}")
        B, st = B_new, st_new
        new_obj = st.value + _penalty(A, B, lam)
        drop = obj - new_obj
        obj = new_obj
        trace.append(obj)
        if drop <= tol * max(1.0, abs(obj)):
            converged = True
            break
    else:
        converged = False
        if strict:
            raise ConvergenceError(
                f"PALM did not reach tolerance in {max_iter} sweeps "
                f"(last objective drop {drop:.3g})", residual=float(drop))
        warnings.warn(
            f"PALM stopped at the sweep budget ({max_iter}); returning the "
            f"last iterate (objective drop {drop:.3g})", RuntimeWarning,
            stacklevel=2)

    c = 0.5 * (np.trace(A) / shape.d1 - np.trace(B) / shape.d2)
    A = A - c * np.eye(shape.d1)
    B = B + c * np.eye(shape.d2)
    model = SqKSPrec(A, B)
    model.metadata.update(iterations=sweep, objective=obj, objective_trace=trace,
                          converged=converged)
    return model
