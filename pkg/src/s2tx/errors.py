"""Exception types raised across the package."""


class S2TXError(Exception):
    """Base class for package errors."""


class InvalidSpecError(S2TXError, ValueError):
    """A window or patch specification is inconsistent."""


class ConfigError(S2TXError, ValueError):
    """An experiment configuration is invalid or cannot be parsed."""


class DataError(S2TXError, ValueError):
    """Input data is malformed, non-finite, or too short."""


class NumericError(S2TXError, FloatingPointError):
    """A computation produced non-finite values.

    Attributes:
        step: index of the first offending step, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
