"""Stochastic (perturbed-observation) ensemble Kalman filter.

The forecast covariance is pluggable: any CovModel variant produced by the
estimators module, a fixed oracle model, or nothing at all (forecast-only
baseline). The analysis never materializes Sigma densely for structured
models: the gain is applied through Sigma @ H^T columns (apply_basis) and
an m x m observed-block solve.

Randomness is drawn from streams keyed by (seed, namespace, step, member),
so results are independent of execution schedule and identical across
estimator choices sharing a seed (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg as sla

from . import rng as rngmod
from .covmodels import CovModel
from .dynamics import Trajectory
from .errors import DimensionError, InsufficientSamplesError
from .estimators import DataMatrix, EstimatorSpec, estimate
from .grids import GridShape, unvec, vec


@dataclass(frozen=True)
class MeasurementOperator:
    """0/1 selection of observed entries of the d-vector (one 1 per row)."""

    indices: np.ndarray
    d: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise DimensionError("observed index set must be a nonempty 1-D array")
        if np.any(idx < 0) or np.any(idx >= self.d):
            raise DimensionError(f"observed indices must lie in [0, {self.d})")
        if np.unique(idx).size != idx.size:
            raise DimensionError("observed indices must be unique")
        object.__setattr__(self, "indices", np.sort(idx))

    @property
    def m(self) -> int:
        return self.indices.size

    def observe(self, v: np.ndarray) -> np.ndarray:
        """H v: select observed entries (works on (d,) or (d, k))."""
        return v[self.indices]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """H^T y: scatter observed values into a length-d vector."""
        out = np.zeros((self.d,) + y.shape[1:])
        out[self.indices] = y
        return out


@dataclass(frozen=True)
class FilterConfig:
    """Ensemble size, noise levels, estimator choice and inflation.

    sigma_w is carried for config parity but the forecast noise itself is
    owned by the scenario dynamics; the harness applies any override when
    it builds the dynamics object.
    """

    n_members: int = 25
    sigma_v: float = 0.1
    sigma_w: float | None = None
    estimator: EstimatorSpec | None = None
    inflation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_members < 2:
            raise InsufficientSamplesError(
                f"ensemble needs at least 2 members, got {self.n_members}")
        if self.sigma_v <= 0:
            raise ValueError(f"sigma_v must be positive, got {self.sigma_v}")
        if self.inflation < 1.0:
            raise ValueError(f"inflation must be >= 1, got {self.inflation}")


@dataclass
class FilterResult:
    """Per-step, per-member errors plus the final analysis state."""

    rmse: np.ndarray              # (T, N) raw L2 errors
    rmse_normalized: np.ndarray   # (T, N) errors / sqrt(d)
    members: np.ndarray           # (d, N) final analysis ensemble
    last_model: CovModel | None = None
    ensembles: list = dataclass_field(default_factory=list)

    @property
    def mean_rmse(self) -> np.ndarray:
        return self.rmse_normalized.mean(axis=1)


def init_ensemble(n_members: int, shape: GridShape, seed: int) -> np.ndarray:
    """(d, N) ensemble of i.i.d. standard normal members, per-member streams."""
    if n_members < 2:
        raise InsufficientSamplesError(
            f"ensemble needs at least 2 members, got {n_members}")
    out = np.empty((shape.d, n_members))
    for i in range(n_members):
        gen = rngmod.substream(seed, rngmod.INIT_ENSEMBLE, i)
        out[:, i] = gen.standard_normal(shape.d)
    return out


def forecast_step(members: np.ndarray, dynamics, seed: int, step: int,
                  inflation: float = 1.0) -> np.ndarray:
    """Propagate every member through the scenario map, then inflate anomalies."""
    shape = dynamics.shape
    if members.shape[0] != shape.d:
        raise DimensionError(f"member dimension {members.shape[0]} != d {shape.d}")
    out = np.empty_like(members)
    for i in range(members.shape[1]):
        gen = rngmod.substream(seed, rngmod.FORECAST, step, i)
        U = dynamics.forecast_member(unvec(members[:, i], shape), gen)
        out[:, i] = vec(U)
    if inflation != 1.0:
        mean = out.mean(axis=1, keepdims=True)
        out = mean + inflation * (out - mean)
    return out


def estimate_forecast_cov(members: np.ndarray, shape: GridShape,
                          spec: EstimatorSpec, init: CovModel | None = None) -> CovModel:
    """Center members, form the data matrix, dispatch to the estimators."""
    if members.shape[1] < 2:
        raise InsufficientSamplesError("covariance estimation needs >= 2 members")
    return estimate(DataMatrix(members.T, shape), spec, init=init)


def kalman_gain(model: CovModel, H: MeasurementOperator, sigma_v: float) -> np.ndarray:
    """Dense (d, m) gain Sigma H^T (H Sigma H^T + sigma_v^2 I)^{-1}.

    Test/diagnostic helper; the analysis step applies the same two factors
    without forming the product explicitly.
    """
    X = model.apply_basis(H.indices)
    C = X[H.indices, :] + sigma_v ** 2 * np.eye(H.m)
    return sla.cho_solve(sla.cho_factor(0.5 * (C + C.T)), X.T).T


def analysis_step(members: np.ndarray, model: CovModel, H: MeasurementOperator,
                  x_obs: np.ndarray, sigma_v: float, seed: int,
                  step: int = 0) -> np.ndarray:
    """Perturbed-observation update of every member.

    member_i += Sigma H^T (H Sigma H^T + sigma_v^2 I)^{-1}
                (x_obs + v_i - H member_i),  v_i ~ N(0, sigma_v^2 I_m).
    """
    d, n = members.shape
    if model.d != d:
        raise DimensionError(f"model dimension {model.d} != member dimension {d}")
    if x_obs.shape != (H.m,):
        raise DimensionError(f"observation length {x_obs.shape} != m {H.m}")
    X = model.apply_basis(H.indices)                    # Sigma H^T, (d, m)
    C = X[H.indices, :] + sigma_v ** 2 * np.eye(H.m)    # H Sigma H^T + R
    chol = sla.cho_factor(0.5 * (C + C.T))
    innov = np.empty((H.m, n))
    for i in range(n):
        gen = rngmod.substream(seed, rngmod.ANALYSIS, step, i)
        perturbed = x_obs + sigma_v * gen.standard_normal(H.m)
        innov[:, i] = perturbed - members[H.indices, i]
    return members + X @ sla.cho_solve(chol, innov)


def synthesize_observation(truth_state: np.ndarray, H: MeasurementOperator,
                           sigma_v: float, seed: int, step: int) -> np.ndarray:
    """H vec(U^k) + N(0, sigma_v^2 I_m), from the estimator-independent stream."""
    gen = rngmod.substream(seed, rngmod.OBSERVATION, step)
    return H.observe(vec(truth_state)) + sigma_v * gen.standard_normal(H.m)


def run_filter(dynamics, truth: Trajectory, cfg: FilterConfig,
               H: MeasurementOperator, fixed_model: CovModel | None = None,
               store_ensembles: bool = False) -> FilterResult:
    """Full forecast / estimate / analyze cycle against a simulated truth.

    Per step: synthesize the observation from the truth, forecast every
    member, fit the forecast covariance (or reuse ``fixed_model``; skip the
    analysis entirely when both it and cfg.estimator are None, giving the
    no-assimilation baseline), update members, and record per-member RMSE
    of the analysis ensemble. Deterministic given (cfg, truth, H).
    """
    shape = dynamics.shape
    if H.d != shape.d:
        raise DimensionError(f"measurement dimension {H.d} != state dimension {shape.d}")
    if len(truth) == 0:
        raise ValueError("empty truth trajectory")
    members = init_ensemble(cfg.n_members, shape, cfg.seed)
    T = len(truth)
    rmse = np.empty((T, cfg.n_members))
    model = None
    ensembles = []
    warm = None
    for k in range(T):
        members = forecast_step(members, dynamics, cfg.seed, k, cfg.inflation)
        if fixed_model is not None:
            model = fixed_model
        elif cfg.estimator is not None:
            model = estimate_forecast_cov(members, shape, cfg.estimator, init=warm)
            if cfg.estimator.kind in ("glasso", "sgpalm", "teralasso", "kglasso"):
                warm = model
        if model is not None:
            x_obs = synthesize_observation(truth.states[k], H, cfg.sigma_v,
                                           cfg.seed, k)
            members = analysis_step(members, model, H, x_obs, cfg.sigma_v,
                                    cfg.seed, k)
        err = members - vec(truth.states[k])[:, None]
        rmse[k] = np.linalg.norm(err, axis=0)
        if store_ensembles:
            ensembles.append(members.copy())
    return FilterResult(rmse=rmse, rmse_normalized=rmse / np.sqrt(shape.d),
                        members=members, last_model=model, ensembles=ensembles)
