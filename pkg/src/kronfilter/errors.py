"""Exception types shared across the package."""


class KronfilterError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(KronfilterError, ValueError):
    """Operand shapes are inconsistent with each other or with a grid."""


class SizeGuardError(KronfilterError, ValueError):
    """A dense d x d materialization would exceed the configured cap."""

    def __init__(self, d: int, guard: int):
        self.d = d
        self.guard = guard
        super().__init__(
            f"dense materialization of a {d} x {d} matrix exceeds the size guard "
            f"(d={d} > {guard}); raise the guard explicitly if this is intended"
        )


class SylvesterSingularError(KronfilterError, ValueError):
    """A factor eigenvalue pair sums to (numerically) zero."""

    def __init__(self, lam, mu, tol: float):
        self.eig_pair = (lam, mu)
        super().__init__(
            f"Sylvester operator is singular: eigenvalue pair "
            f"lambda(A)={lam:.6g}, mu(B)={mu:.6g} sums to {lam + mu:.3g} "
            f"(tolerance {tol:.3g})"
        )


class StabilityError(KronfilterError, ValueError):
    """A Kronecker-sum eigenvalue violates the (-1, 1) stability band."""

    def __init__(self, eigenvalue):
        self.eigenvalue = eigenvalue
        super().__init__(
            f"Kronecker-sum eigenvalue {eigenvalue:.6g} lies outside (-1, 1); "
            "the precision recursion has no finite fixed point"
        )


class ConvergenceError(KronfilterError, RuntimeError):
    """An iterative solver exhausted max_iter before reaching tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message)


class InsufficientSamplesError(KronfilterError, ValueError):
    """Fewer samples/members than the operation requires."""


class UndefinedMetricError(KronfilterError, ValueError):
    """A support metric is undefined for the given truth pattern."""


class ConfigError(KronfilterError, ValueError):
    """Experiment configuration failed to parse or validate."""
