"""Exception hierarchy shared by every module."""


class ZsrlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ZsrlError, ValueError):
    """Operand dimensions do not agree."""


class ConfigError(ZsrlError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DataError(ZsrlError, ValueError):
    """Input data violates a contract (normalization, missing class, ...)."""


class ParseError(DataError):
    """A file row could not be parsed. Carries the 1-based line number."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class DomainError(DataError):
    """An item from the wrong domain (sketch vs photo) was supplied."""


class SamplingError(ZsrlError, ValueError):
    """The data cannot support the requested sampling."""


class NumericError(ZsrlError, ArithmeticError):
    """Non-finite values appeared during training."""


class EvaluationError(ZsrlError, ValueError):
    """Retrieval evaluation could not produce a result."""
