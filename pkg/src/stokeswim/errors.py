"""Exception types shared across the package."""


class StokeswimError(Exception):
    """Base class for all package-specific errors."""


class OverlapError(StokeswimError):
    """Ball surfaces touch or intersect (separation <= 2a)."""


class SingularPointError(StokeswimError):
    """Kernel evaluated at a singular point (r = 0)."""


class FactorizationError(StokeswimError):
    """Influence matrix could not be factorized or solved reliably."""


class NegativePowerError(StokeswimError):
    """Dissipated power came out negative beyond tolerance."""


class SingularResistanceError(StokeswimError):
    """Resistance matrix is singular or not positive definite."""


class InfeasibleMaskError(StokeswimError):
    """Endpoint mask leaves every position component free."""


class MaxIterationsError(StokeswimError):
    """Optimizer hit the iteration limit without a feasible iterate.

    Carries the best iterate seen so far in ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class LineSearchFailure(StokeswimError):
    """Optimizer line search failed to make progress."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
