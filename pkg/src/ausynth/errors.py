"""Exception types shared across the package."""


class AusynthError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AusynthError):
    """Invalid configuration: bad option values, unbound inputs, empty datasets."""


class ContractError(AusynthError):
    """A call violated an interface contract (shape or dimension mismatch)."""


class NumericError(AusynthError):
    """A computation produced or received non-finite values."""


class ParseError(AusynthError):
    """A file could not be parsed; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NormalizationError(AusynthError):
    """Dataset normalization is impossible (e.g. a constant dimension)."""
