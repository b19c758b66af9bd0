"""Exception types shared across the package.

Every error raised on a documented failure path derives from PredictorError so
the CLI can map any failure to a stable, machine-parsable error class.
"""


class PredictorError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(PredictorError):
    """Tensor or layer shapes are incompatible."""


class ContractError(PredictorError):
    """A documented precondition was violated by the caller."""


class EmptyPoolError(ContractError):
    """A mean or attention was requested over zero unmasked entries."""


class ConfigError(PredictorError):
    """Invalid configuration value or combination."""


class FormatError(PredictorError):
    """A binary container (feature file, checkpoint) failed to parse."""


class ValidationError(PredictorError):
    """Manifest validation failed; collects all offending lines."""

    def __init__(self, message: str, issues: list[str] | None = None):
        super().__init__(message)
        self.issues = issues or []


class MissingReferenceError(PredictorError):
    """A clean reference was required but not present."""


class NumericError(PredictorError):
    """Non-finite values reached an operation that assumes finite input."""


class TrainingDiverged(NumericError):
    """Loss became non-finite during training."""


class UndefinedCorrelationError(PredictorError):
    """Correlation requested on a zero-variance vector."""


class PredictionError(PredictorError):
    """An ensemble member could not produce a prediction."""
