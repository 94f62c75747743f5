"""Exception types raised by the solvers and bound calculators."""


class ConvexTestError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ConvexTestError, ValueError):
    pass


class NonConvergence(ConvexTestError, RuntimeError):
    """An iterative routine hit its iteration cap.

    ``residual`` holds the last stopping quantity (duality gap, certificate
    value, ...) and ``state`` whatever partial result the routine had.
    """

    def __init__(self, message, residual=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state


class OverlappingHypotheses(ConvexTestError):
    """The two hypothesis sets intersect or touch; no test can separate them."""


class DegeneratePair(ConvexTestError):
    """The candidate pair has (numerically) zero Mahalanobis gap."""


class InvalidRegime(ConvexTestError, ValueError):
    """A bound was requested outside the range where its formula is defined."""


class ZeroMassOutcome(ConvexTestError):
    """An outcome has zero probability under exactly one of two pmfs."""

    def __init__(self, message, outcomes=()):
        super().__init__(message)
        self.outcomes = tuple(outcomes)
