"""Exception types raised across the package."""


class LogRatioError(Exception):
    """Base class for all package errors."""


class ParseError(LogRatioError, ValueError):
    """A CSV cell could not be parsed; carries the row/column position."""


class DomainError(LogRatioError, ValueError):
    """Input lies outside the domain of the operation (e.g. log of a non-positive value)."""


class DegenerateColumnError(DomainError):
    pass


class NotAContrastError(DomainError):
    """Coefficient vector does not sum to zero, so it has no log-ratio form."""


class RankDeficientError(DomainError):
    pass


class ConvergenceError(LogRatioError, RuntimeError):
    pass


class SelectionConsistencyError(LogRatioError, RuntimeError):
    """The polyhedral event does not contain the response that generated it."""


class InfeasibleTruncationError(LogRatioError, RuntimeError):
    pass


class UnstableTruncationError(LogRatioError, ArithmeticError):
    pass


class NoTestError(LogRatioError, ValueError):
    """Nothing to test (empty selected support)."""
