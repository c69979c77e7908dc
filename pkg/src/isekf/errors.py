"""Exception types shared across the package."""


class IsekfError(Exception):
    """Base class for all package-specific errors."""


class InputDomainError(IsekfError, ValueError):
    """An argument is outside the mathematical domain of an operation
    (non-finite value, negative bound, parameter out of its mode range)."""


class ConfigurationError(IsekfError, ValueError):
    """Inconsistent dimensions or invalid configuration values."""


class NumericalFailure(IsekfError, ArithmeticError):
    """A numeric computation produced non-finite values or an
    unsolvable linear system.

    Attributes:
        context: optional payload (offending state, condition estimate).
    """

    def __init__(self, message: str, context=None):
        super().__init__(message)
        self.context = context


class CertificationFailure(IsekfError):
    """A stability certificate could not be established; the message
    names the first violated condition."""


class PropertyFailure(IsekfError):
    """A certified bound was violated during a verification run.

    Attributes:
        at: time (or step index) of the first violation.
    """

    def __init__(self, message: str, at=None):
        super().__init__(message)
        self.at = at


class UndefinedMetricError(IsekfError, ValueError):
    """A metric was requested over an empty window."""
