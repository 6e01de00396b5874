"""Exception types shared across the package."""


class MPNetError(Exception):
    """Base class for all package errors."""


class InvalidInput(MPNetError, ValueError):
    """Arguments violate a documented precondition (shape, range, finiteness)."""


class DomainError(MPNetError, ValueError):
    """A scalar function was applied outside its domain (e.g. log of a non-positive eigenvalue)."""


class NumericalFailure(MPNetError, ArithmeticError):
    """A numerical routine failed to converge or produced a non-finite result."""


class FormatError(MPNetError, ValueError):
    """A file does not match the expected binary or text layout."""


class ConfigError(InvalidInput):
    """A configuration document is malformed; the message names the line."""
