"""Structured covariance/precision estimators behind one dispatch surface.

``estimate(data, spec)`` takes centered vectorized fields and an
EstimatorSpec and returns the fitted CovModel. Default penalties follow
0.1 * sqrt(log d_f / n_f) per factor, scaled by the relevant Gram diagonal
so the rule is invariant to the data's variance level; everything is
overridable through the spec.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..covmodels import CovModel, DenseCov
from ..errors import InsufficientSamplesError, UndefinedMetricError
from ..grids import GridShape
from .glasso import glasso
from .kglasso import kglasso
from .kpca import kpca
from .sgpalm import sg_palm
from .teralasso import partial_traces_from_fields, teralasso

KINDS = ("sample", "glasso", "kglasso", "teralasso", "sgpalm", "kpca")

__all__ = [
    "DataMatrix",
    "EstimatorSpec",
    "KINDS",
    "default_penalty",
    "estimate",
    "glasso",
    "kglasso",
    "kpca",
    "nonzero_pattern",
    "sample_cov",
    "sg_palm",
    "support_metrics",
    "teralasso",
]


@dataclass
class DataMatrix:
    """N vectorized field samples as rows, plus the grid they live on."""

    rows: np.ndarray
    shape: GridShape

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != self.shape.d:
            raise ValueError(
                f"rows must be (N, {self.shape.d}), got {self.rows.shape}")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def centered(self) -> np.ndarray:
        if self.n < 2:
            raise InsufficientSamplesError(
                f"centering needs at least 2 samples, got {self.n}")
        return self.rows - self.rows.mean(axis=0, keepdims=True)

    def fields(self) -> np.ndarray:
        """Centered samples as a (d1, d2, N) stack."""
        return self.centered().T.reshape(
            self.shape.d1, self.shape.d2, self.n, order="F")


@dataclass
class EstimatorSpec:
    """Estimator selection plus solver controls.

    lambda1/lambda2 default to the per-factor penalty rule when None; rank
    and svt apply to kpca only (rank wins when both are set); strict=False
    lets glasso return its budgeted best iterate instead of raising.
    """

    kind: str
    lambda1: float | None = None
    lambda2: float | None = None
    rank: int | None = None
    svt: float | None = None
    max_iter: int | None = None
    tol: float | None = None
    strict: bool = True
    engine: str = "fista"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; choose from {KINDS}")
        if self.engine not in ("fista", "admm"):
            raise ValueError(f"engine must be 'fista' or 'admm', got {self.engine!r}")
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.rank is not None and self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.svt is not None and self.svt <= 0:
            raise ValueError(f"svt must be positive, got {self.svt}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.tol is not None and self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


def default_penalty(dim: int, n_eff: int) -> float:
    """Per-factor penalty rule 0.1 * sqrt(log(dim) / n_eff)."""
    return 0.1 * np.sqrt(np.log(dim) / max(n_eff, 1))


def sample_cov(X: DataMatrix) -> DenseCov:
    """Unstructured sample covariance (1/(N-1) normalization)."""
    Xc = X.centered()
    S = Xc.T @ Xc / (X.n - 1)
    model = DenseCov(S, X.shape)
    model.metadata["n_samples"] = X.n
    return model


def estimate(X: DataMatrix, spec: EstimatorSpec,
             init: CovModel | None = None) -> CovModel:
    """Fit the requested model to centered data; init warm-starts glasso."""
    shape = X.shape
    n = X.n
    kw = {}
    if spec.max_iter is not None:
        kw["max_iter"] = spec.max_iter
    if spec.tol is not None:
        kw["tol"] = spec.tol

    if spec.kind == "sample":
        return sample_cov(X)

    if spec.kind == "glasso":
        Xc = X.centered()
        S = Xc.T @ Xc / (n - 1)
        lam = spec.lambda1
        if lam is None:
            lam = default_penalty(shape.d, n) * float(np.diag(S).mean())
        init_omega = getattr(init, "Omega", None)
        return glasso(S, lam, init=init_omega, shape=shape, strict=spec.strict,
                      engine=spec.engine, **kw)

    if spec.kind == "kglasso":
        U = X.fields()
        lam1 = spec.lambda1
        lam2 = spec.lambda2
        if lam1 is None or lam2 is None:
            var = float(np.mean(U * U))
            if lam1 is None:
                lam1 = default_penalty(shape.d1, n * shape.d2) * var
            if lam2 is None:
                lam2 = default_penalty(shape.d2, n * shape.d1) * var
        init_factors = None
        if init is not None and getattr(init, "kind", None) == "kp_prec":
            init_factors = (init.A, init.B)
        return kglasso(X.centered(), shape, lam1, lam2,
                       init_factors=init_factors, strict=spec.strict, **kw)

    if spec.kind == "teralasso":
        grams = partial_traces_from_fields(X.fields())
        lam1 = spec.lambda1
        lam2 = spec.lambda2
        if lam1 is None:
            lam1 = default_penalty(shape.d1, n * shape.d2) * float(np.diag(grams[0]).mean())
        if lam2 is None:
            lam2 = default_penalty(shape.d2, n * shape.d1) * float(np.diag(grams[1]).mean())
        init_factors = None
        if init is not None and getattr(init, "kind", None) == "ks_prec":
            init_factors = (init.A, init.B)
        return teralasso(grams, shape, lam1, lam2, init_factors=init_factors,
                         strict=spec.strict, **kw)

    if spec.kind == "sgpalm":
        lam = spec.lambda1
        if lam is None:
            lam = default_penalty(shape.d, n)
        init_factors = None
        if init is not None and getattr(init, "kind", None) == "sqks_prec":
            init_factors = (init.A, init.B)
        return sg_palm(X.centered(), shape, lam, init_factors=init_factors,
                       strict=spec.strict, **kw)

    if spec.kind == "kpca":
        Xc = X.centered()
        S = Xc.T @ Xc / (n - 1)
        rank, svt = spec.rank, spec.svt
        if rank is None and svt is None:
            rank = 3
        elif rank is not None and svt is not None:
            svt = None
        return kpca(S, shape, rank=rank, svt=svt)

    raise AssertionError(f"unhandled kind {spec.kind}")


def nonzero_pattern(M: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean pattern: entries below threshold * max|M| count as zero."""
    M = np.asarray(M, dtype=float)
    cut = threshold * np.abs(M).max(initial=0.0)
    return np.abs(M) >= cut


def support_metrics(est, truth, threshold: float) -> dict:
    """Off-diagonal support precision/recall/F1 of est against truth.

    ``est`` may be a CovModel (its structure side is used) or a dense
    matrix; ``truth`` is a dense matrix or boolean pattern whose nonzero
    off-diagonal entries are the positives.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    M = est.structure_matrix()[1] if isinstance(est, CovModel) else np.asarray(est)
    truth = np.asarray(truth)
    if M.shape != truth.shape:
        raise ValueError(f"shape mismatch: estimate {M.shape} vs truth {truth.shape}")
    off = ~np.eye(M.shape[0], dtype=bool)
    pred = nonzero_pattern(M, threshold) & off
    if truth.dtype == bool:
        actual = truth & off
    else:
        actual = (truth != 0) & off
    n_actual = int(actual.sum())
    if n_actual == 0:
        raise UndefinedMetricError("truth pattern has no off-diagonal nonzeros")
    tp = int((pred & actual).sum())
    fp = int((pred & ~actual).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / n_actual
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}
