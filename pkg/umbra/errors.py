"""Exception hierarchy shared by every umbra module.

All errors raised on purpose by the package derive from :class:`UmbraError`,
so the command line can turn them into exit code 1 with a single ``except``.
"""


class UmbraError(Exception):
    """Root of all umbra errors."""


class ConfigError(UmbraError, ValueError):
    """A configuration value is missing, malformed or out of range."""


class DecodeError(UmbraError, ValueError):
    """An image or mask file could not be decoded."""


class UnsupportedFormatError(DecodeError):
    """The file decodes, but not as one of the accepted formats."""


class EmptyRegionError(UmbraError, ValueError):
    """A region mask selects no pixels where at least one is required."""


class DegenerateGeometryError(UmbraError, ValueError):
    """A projection is undefined, e.g. a sun ray parallel to the sign plane."""


class NoShadowError(UmbraError):
    """The sun is at or below the horizon, or behind the sign plane."""


class QueryError(UmbraError, RuntimeError):
    """A classifier query failed."""


class ProtocolError(QueryError):
    """An external oracle answered with something the protocol does not allow."""


class QueryTimeoutError(QueryError):
    """An external oracle did not answer in time."""


class QueryBudgetExhausted(UmbraError):
    """The attack's query budget does not cover the next cost evaluation."""

    def __init__(self, used: int, budget: int):
        super().__init__(f"query budget exhausted: {used} of {budget} queries used")
        self.used = used
        self.budget = budget


class OptimizationAborted(UmbraError):
    """A cost evaluation raised; ``result`` holds the work done before it.

    The original exception is chained as ``__cause__``.
    """

    def __init__(self, result, message: str = "cost evaluation failed"):
        super().__init__(message)
        self.result = result
