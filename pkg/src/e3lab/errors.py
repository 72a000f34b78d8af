"""Exception hierarchy shared by every e3lab module."""


class E3LabError(Exception):
    """Base class for all library errors."""


class ConfigError(E3LabError, ValueError):
    """Invalid or inconsistent configuration value."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DataError(E3LabError, ValueError):
    """Training or evaluation data violates a precondition."""


class DimensionError(E3LabError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(E3LabError, RuntimeError):
    """A caller broke an API contract (wrong state, wrong arity)."""


class FormatError(E3LabError, ValueError):
    """On-disk artifact is malformed, truncated or of the wrong version."""


class SourceNotFoundError(E3LabError, KeyError):
    """Requested image source is not part of a corpus."""


class UndefinedMetricError(E3LabError, ZeroDivisionError):
    """Metric is undefined for the given arguments."""
