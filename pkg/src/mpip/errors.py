"""Exception hierarchy shared across the package.

Three error classes map onto the three failure modes the CLI distinguishes:
bad inputs to an API call (:class:`DomainError`), malformed data files
(:class:`FormatError`), and numerical breakdown such as singular matrices
(:class:`NumericalError`).
"""


class MpipError(Exception):
    """Base class for all package-specific errors."""


class DomainError(MpipError, ValueError):
    """An argument violates an operation's preconditions."""


class FormatError(MpipError, ValueError):
    """A data file does not conform to the expected on-disk format."""


class NumericalError(MpipError, ArithmeticError):
    """A linear-algebra or optimization step failed numerically."""
