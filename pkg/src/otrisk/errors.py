"""Exception types shared across the package."""


class OtriskError(Exception):
    """Base class for all package errors."""


class InvalidInput(OtriskError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(OtriskError, ValueError):
    """A data file could not be parsed.

    Attributes:
        row: 1-based row number of the offending line, if known.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class Unsupported(OtriskError):
    """A requested closed form or option is not registered."""


class UnboundedDual(OtriskError):
    """The dual objective is +inf over the whole search range."""


class InfeasibleCoupling(OtriskError):
    """A coupling violates its marginal or budget constraint."""


class SolverError(OtriskError):
    """The LP solver failed numerically."""


class InvalidProjection(OtriskError):
    """A projection selector broke the distance-to-set contract."""


class NeedMorePath(OtriskError):
    """The Brownian source ran out before the embedding covered the horizon."""


class ResolutionError(OtriskError):
    """The path grid is too coarse to resolve a drawdown."""
