"""Exception types raised across the package."""


class TarqError(Exception):
    """Base class for every error raised by :mod:`tarq`."""


class SingularMetric(TarqError, ArithmeticError):
    """A (damped) quadratic form could not be factorized."""


class DimMismatch(TarqError, ValueError):
    pass


class BitsUnsupported(TarqError, ValueError):
    pass


class LengthMismatch(TarqError, ValueError):
    pass


class EmptyBatch(TarqError, ValueError):
    pass


class ShapeChainMismatch(TarqError, ValueError):
    pass


class InsufficientCorpus(TarqError, ValueError):
    pass


class EmptyUtterance(TarqError, ValueError):
    pass


class BadSpec(TarqError, ValueError):
    pass


class EmptyReport(TarqError, ValueError):
    pass


class FormatError(TarqError, ValueError):
    """A tensor or report file could not be parsed."""
