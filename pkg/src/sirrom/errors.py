"""Exception types raised across the package.

Argument and domain problems derive from ``ValueError`` so callers that only
care about "bad input" can catch that; numerical breakdowns derive from
``ArithmeticError``.
"""


class SirromError(Exception):
    """Base class for all package errors."""


class DomainError(SirromError, ValueError):
    """A value lies outside the admissible domain (negative rate, I+R > N, ...)."""


class ParseError(SirromError, ValueError):
    """Malformed input file. ``row`` is the 1-based data row, when known."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ContiguityError(SirromError, ValueError):
    """Daily series with a gap or non-increasing dates."""


class CollapseDegeneracyError(SirromError, ValueError):
    """Collapsed infectious compartment vanishes, so rates are undefined."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class EmptyTrainingSetError(SirromError, ValueError):
    """Every scenario of a sweep was dropped."""


class InvertibilityError(SirromError, ArithmeticError):
    """Interaction matrix is singular or too ill-conditioned at ``index``."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class NumericError(SirromError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class FitError(SirromError, ArithmeticError):
    """Optimizer produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
