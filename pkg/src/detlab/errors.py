"""Exception types raised across the package."""


class DetLabError(Exception):
    """Base class for all package errors."""


class DimensionError(DetLabError, ValueError):
    pass


class NotPSD(DetLabError, ValueError):
    """A matrix or field has an eigenvalue below the PSD tolerance."""


class UnderResolvedKernel(DetLabError, ValueError):
    pass


class UnderResolvedBall(DetLabError, ValueError):
    pass


class NotConvexPotential(DetLabError, ValueError):
    pass


class ResolutionMismatch(DetLabError, ValueError):
    pass


class DegenerateMean(DetLabError, ValueError):
    pass


class NegativeF(DetLabError, ValueError):
    pass


class GridMismatch(DetLabError, ValueError):
    pass


class NotUniformlyElliptic(DetLabError, ValueError):
    pass


class FamilyMismatch(DetLabError, ValueError):
    pass


class NewtonStall(DetLabError, RuntimeError):
    """Newton iteration stopped making progress.

    The best iterate seen is attached as ``best`` (an ``MAResult``).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class PositivityLoss(DetLabError, RuntimeError):
    """No damping factor keeps the Hessian of the potential positive definite."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
