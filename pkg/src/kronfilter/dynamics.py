"""Ground-truth generators for the two PDE-driven scenarios.

Poisson-AR(1): a Laplacian Sylvester solve maps an AR(1) noise field Z^k to
the state U^k at every step. Convection-diffusion: the state itself evolves
through the inverse of a Kronecker-sum update operator, plus white state
noise. Both simulators are bit-reproducible from (params, seed).

The implied second-order structure is also computed here: the precision
recursion Omega^k = L Omega^{k-1} L + sigma_w^{-2} I and its fixed point
(valid when every Kronecker-sum eigenvalue lies strictly inside (-1, 1)),
plus the exact covariance recursion used as an independent cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import rng as rngmod
from .errors import DimensionError, StabilityError, ConvergenceError
from .grids import GridShape, as_field
from .kronops import KronSumOperator, check_size_guard, DEFAULT_SIZE_GUARD


def laplacian_1d(n: int) -> np.ndarray:
    """Tridiagonal 1-D Dirichlet Laplacian: diagonal 2, off-diagonals -1."""
    if n < 2:
        raise DimensionError(f"laplacian_1d needs n >= 2, got {n}")
    A = 2.0 * np.eye(n)
    idx = np.arange(n - 1)
    A[idx, idx + 1] = -1.0
    A[idx + 1, idx] = -1.0
    return A


def poisson_operator(shape: GridShape) -> KronSumOperator:
    """Kronecker-sum operator of the discrete 2-D Poisson problem."""
    return KronSumOperator(laplacian_1d(shape.d1), laplacian_1d(shape.d2))


def poisson_solve(F: np.ndarray, op: KronSumOperator | None = None) -> np.ndarray:
    """Solve the discrete Poisson problem A U + U A^T = F on F's grid."""
    F = np.asarray(F, dtype=float)
    if op is None:
        op = poisson_operator(GridShape(*F.shape))
    return op.solve(F)


@dataclass(frozen=True)
class PoissonAR1Params:
    """Poisson-AR(1) scenario parameters.

    Z^0 ~ N(0, sigma_z^2 I); Z^k = a Z^{k-1} + W^k with W i.i.d.
    N(0, sigma_w^2); U^k solves the Poisson problem with source Z^k.
    Defaults: a = 0 (temporally independent states) and sigma_w = sigma_z,
    so the AR(1) source is stationary from the start.
    """

    shape: GridShape
    a: float = 0.0
    sigma_z: float = 1.0
    sigma_w: float = 1.0
    T: int = 20

    def __post_init__(self):
        if not abs(self.a) < 1:
            raise ValueError(f"AR coefficient must satisfy |a| < 1, got {self.a}")
        if self.sigma_z <= 0 or self.sigma_w <= 0:
            raise ValueError("noise levels sigma_z, sigma_w must be positive")
        if self.T < 1:
            raise ValueError(f"need T >= 1 steps, got {self.T}")


@dataclass(frozen=True)
class ConvDiffParams:
    """Convection-diffusion scenario parameters.

    theta is the diffusivity, epsilon the convection velocity, h the mesh
    step and dt the time step; sigma_w is the additive state-noise level of
    the state-space form.
    """

    shape: GridShape
    theta: float = 0.25
    epsilon: float = 0.2
    h: float = 1.0
    dt: float = 1.0
    sigma_w: float = 0.01
    T: int = 20

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError(f"diffusivity theta must be nonnegative, got {self.theta}")
        if self.h <= 0 or self.dt <= 0:
            raise ValueError("mesh step h and time step dt must be positive")
        if self.sigma_w < 0:
            raise ValueError("sigma_w must be nonnegative")
        if self.T < 1:
            raise ValueError(f"need T >= 1 steps, got {self.T}")


@dataclass
class Trajectory:
    """Simulated truth: states[k] is the field at step k+1 (k = 0..T-1)."""

    scenario: str
    states: list
    seed: int
    params: object = None
    noises: list | None = None
    warnings: list = dataclass_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.states[0].shape)


def simulate_poisson_ar1(p: PoissonAR1Params, seed: int,
                         keep_noises: bool = False) -> Trajectory:
    """Generate T Poisson-AR(1) states, deterministic given (p, seed)."""
    rng = rngmod.substream(seed, rngmod.TRUTH)
    op = poisson_operator(p.shape)
    dims = p.shape.as_tuple()
    Z = p.sigma_z * rng.standard_normal(dims)
    states = []
    noises = [] if keep_noises else None
    for _ in range(p.T):
        W = p.sigma_w * rng.standard_normal(dims)
        Z = p.a * Z + W
        states.append(op.solve(Z))
        if keep_noises:
            noises.append(W)
    return Trajectory("poisson_ar1", states, seed, params=p, noises=noises)


def convdiff_factors(p: ConvDiffParams) -> KronSumOperator:
    """Update-operator factors of the discretized convection-diffusion step.

    With c = theta*dt/h^2 and g = epsilon*dt/(2h), both factors are
    tridiagonal with diagonal 1/2 + 2c, superdiagonal -c + g and
    subdiagonal -c - g (the identity term of the stencil is split evenly
    between the two factors). The Kronecker-sum action of the result on
    U^k reproduces the explicit stencil of the time discretization exactly;
    for epsilon != 0 the factors are nonsymmetric.
    """
    c = p.theta * p.dt / p.h ** 2
    g = p.epsilon * p.dt / (2.0 * p.h)

    def factor(n: int) -> np.ndarray:
        M = (0.5 + 2.0 * c) * np.eye(n)
        idx = np.arange(n - 1)
        M[idx, idx + 1] = -c + g
        M[idx + 1, idx] = -c - g
        return M

    return KronSumOperator(factor(p.shape.d1), factor(p.shape.d2))


def stencil_apply(U: np.ndarray, p: ConvDiffParams) -> np.ndarray:
    """Pointwise stencil mapping U^k to U^{k-1}; independent oracle.

    Pure loops over grid points with zero Dirichlet neighbors beyond the
    boundary; no matrix algebra, so it cross-checks convdiff_factors.
    """
    U = as_field(U, p.shape)
    d1, d2 = p.shape.d1, p.shape.d2
    c = p.theta * p.dt / p.h ** 2
    g = p.epsilon * p.dt / (2.0 * p.h)
    out = np.zeros_like(U)
    for i in range(d1):
        for j in range(d2):
            up = U[i - 1, j] if i > 0 else 0.0
            down = U[i + 1, j] if i < d1 - 1 else 0.0
            left = U[i, j - 1] if j > 0 else 0.0
            right = U[i, j + 1] if j < d2 - 1 else 0.0
            out[i, j] = ((1.0 + 4.0 * c) * U[i, j]
                         - c * (up + down + left + right)
                         + g * (down - up + right - left))
    return out


def _stability_warnings(op: KronSumOperator) -> list[str]:
    eigs = op.eigvals()
    mods = np.abs(eigs)
    notes = []
    if mods.min() < 1.0:
        worst = eigs[np.argmin(mods)]
        notes.append(
            f"inverse update map amplifies some modes: |1/(lambda+mu)| = "
            f"{1.0 / mods.min():.3g} > 1 at eigenvalue {worst:.6g}"
        )
    return notes


def simulate_convdiff(p: ConvDiffParams, U0: np.ndarray, seed: int,
                      keep_noises: bool = False) -> Trajectory:
    """Propagate U0 through T inverse-stencil steps plus state noise."""
    U = as_field(U0, p.shape)
    op = convdiff_factors(p)
    notes = _stability_warnings(op)
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    rng = rngmod.substream(seed, rngmod.TRUTH)
    states = []
    noises = [] if keep_noises else None
    for _ in range(p.T):
        U = op.solve(U)
        if p.sigma_w > 0:
            W = p.sigma_w * rng.standard_normal(p.shape.as_tuple())
            U = U + W
        else:
            W = np.zeros(p.shape.as_tuple())
        states.append(U)
        if keep_noises:
            noises.append(W)
    return Trajectory("convdiff", states, seed, params=p, noises=noises,
                      warnings=notes)


def _apply_left(op: KronSumOperator, M: np.ndarray) -> np.ndarray:
    """L @ M for dense M, column-batched through the factor form."""
    d = op.d
    T = M.reshape(op.d1, op.d2, M.shape[1], order="F")
    return op.apply(T).reshape(d, M.shape[1], order="F")


def precision_recursion_step(Omega_prev: np.ndarray, op: KronSumOperator,
                             sigma_w: float,
                             guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
    """One step of the state precision recursion L Omega L + sigma_w^{-2} I.

    Implemented exactly as printed (L on both sides, untransposed), with the
    result symmetrized to suppress round-off asymmetry. sigma_w = inf is
    accepted and drops the additive term.
    """
    Omega_prev = np.asarray(Omega_prev, dtype=float)
    d = op.d
    if Omega_prev.shape != (d, d):
        raise DimensionError(f"Omega shape {Omega_prev.shape} != ({d}, {d})")
    check_size_guard(d, guard)
    opT = KronSumOperator(op.A.T, op.B.T)
    M = _apply_left(op, Omega_prev)           # L @ Omega
    M = _apply_left(opT, M.T).T               # (L @ Omega) @ L
    inv_var = 0.0 if np.isinf(sigma_w) else sigma_w ** -2
    M[np.diag_indices(d)] += inv_var
    return 0.5 * (M + M.T)


def steady_state_precision(op: KronSumOperator, sigma_w: float,
                           tol: float = 1e-10, max_iter: int = 10_000,
                           guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
    """Fixed point of the precision recursion, from Omega^0 = sigma_w^{-2} I.

    Requires every Kronecker-sum eigenvalue strictly inside the unit
    interval; otherwise the recursion diverges and a StabilityError naming
    the violating eigenvalue is raised. Iterates until the successive
    Frobenius change drops below tol.
    """
    eigs = op.eigvals()
    mods = np.abs(eigs)
    if mods.max(initial=0.0) >= 1.0:
        raise StabilityError(eigs[np.argmax(mods)])
    d = op.d
    check_size_guard(d, guard)
    inv_var = 0.0 if np.isinf(sigma_w) else sigma_w ** -2
    Omega = inv_var * np.eye(d)
    for _ in range(max_iter):
        Omega_next = precision_recursion_step(Omega, op, sigma_w, guard=guard)
        change = np.linalg.norm(Omega_next - Omega)
        Omega = Omega_next
        if change <= tol:
            return Omega
    raise ConvergenceError(
        f"precision recursion did not converge in {max_iter} iterations "
        f"(last change {change:.3g})", residual=float(change))


def covariance_recursion_step(Sigma_prev: np.ndarray, op: KronSumOperator,
                              sigma_w: float,
                              guard: int | None = DEFAULT_SIZE_GUARD) -> np.ndarray:
    """Exact covariance recursion L^{-1} Sigma L^{-T} + sigma_w^2 I.

    Independent cross-check for the printed precision recursion; used by the
    harness and tests, not by the filter.
    """
    Sigma_prev = np.asarray(Sigma_prev, dtype=float)
    d = op.d
    if Sigma_prev.shape != (d, d):
        raise DimensionError(f"Sigma shape {Sigma_prev.shape} != ({d}, {d})")
    check_size_guard(d, guard)

    def solve_left(M):
        T = M.reshape(op.d1, op.d2, M.shape[1], order="F")
        return op.solve(T).reshape(d, M.shape[1], order="F")

    M = solve_left(Sigma_prev)                # L^{-1} Sigma
    opT = KronSumOperator(op.A.T, op.B.T)
    TT = M.T.reshape(op.d1, op.d2, d, order="F")
    M = opT.solve(TT).reshape(d, d, order="F").T
    M[np.diag_indices(d)] += sigma_w ** 2
    return 0.5 * (M + M.T)


class PoissonDynamics:
    """Member-propagation view of the Poisson-AR(1) scenario.

    The forecast map follows the generative equations: U+ = a U +
    PoissonSolve(W) with W ~ N(0, sigma_w^2 I), i.e. the innovation enters
    through the Poisson solve, not additively in state space.
    """

    name = "poisson_ar1"

    def __init__(self, params: PoissonAR1Params):
        self.params = params
        self.shape = params.shape
        self.op = poisson_operator(params.shape)

    def forecast_member(self, U: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        W = self.params.sigma_w * rng.standard_normal(self.shape.as_tuple())
        return self.params.a * U + self.op.solve(W)

    def simulate_truth(self, seed: int) -> Trajectory:
        return simulate_poisson_ar1(self.params, seed)

    def true_state_precision_factors(self) -> tuple[KronSumOperator, float]:
        """Operator L and scale s with per-step precision s^2 L^2 (a = 0)."""
        stat_var = self.params.sigma_w ** 2 / (1.0 - self.params.a ** 2)
        return self.op, 1.0 / np.sqrt(stat_var)


class ConvDiffDynamics:
    """Member-propagation view of the convection-diffusion scenario."""

    name = "convdiff"

    def __init__(self, params: ConvDiffParams, u0_sigma: float = 1.0):
        self.params = params
        self.shape = params.shape
        self.op = convdiff_factors(params)
        self.u0_sigma = u0_sigma

    def forecast_member(self, U: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = self.op.solve(U)
        if self.params.sigma_w > 0:
            out = out + self.params.sigma_w * rng.standard_normal(self.shape.as_tuple())
        return out

    def initial_truth(self, seed: int) -> np.ndarray:
        rng = rngmod.substream(seed, rngmod.TRUTH, 0)
        return self.u0_sigma * rng.standard_normal(self.shape.as_tuple())

    def simulate_truth(self, seed: int) -> Trajectory:
        return simulate_convdiff(self.params, self.initial_truth(seed), seed)
