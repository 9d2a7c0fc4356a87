"""Exception types raised across the package."""


class MLCLError(ValueError):
    """Base class for all package errors."""


class DegenerateVectorError(MLCLError):
    """A vector norm fell at or below the cosine-similarity guard."""


class EmptyInputError(MLCLError):
    pass


class ShapeError(MLCLError):
    pass


class NonScalarError(MLCLError):
    pass


class NonFiniteError(MLCLError):
    pass


class BatchTooSmallError(MLCLError):
    pass


class LabelSpaceTooSmallError(MLCLError):
    pass


class ConfigError(MLCLError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class RecordError(MLCLError):
    """Malformed input record; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
