"""Exception types shared across the package."""


class OrdconError(Exception):
    """Base class for every package-specific error."""


class ShapeMismatchError(OrdconError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(OrdconError):
    """A value lies outside the mathematical domain of an operation."""


class DivisionByZeroError(DomainError):
    """Elementwise division hit a zero divisor entry."""


class NearZeroNormError(DomainError):
    """A vector's Euclidean norm fell at or below the norm floor."""


class LabelRangeError(OrdconError):
    """An integer label falls outside its admissible range."""


class RelationError(OrdconError):
    """An ordinal relation is invalid for the requested construction."""


class DataError(OrdconError):
    """A dataset, batch, or data file violates a structural requirement."""


class ConfigError(OrdconError):
    """A configuration value or combination of values is invalid."""


class CheckpointError(OrdconError):
    """A checkpoint cannot be used: bad version or incompatible shapes."""


class MissingGradientError(OrdconError):
    """An optimizer step was asked to update a parameter with no gradient."""


class NumericalError(OrdconError):
    """A non-finite value surfaced where a finite one is required."""

    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
