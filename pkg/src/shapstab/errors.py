"""Exception types raised across the shapstab pipeline."""


class ShapStabError(Exception):
    """Base class for all shapstab errors."""


class SchemaError(ShapStabError):
    """CSV header does not match the expected column schema."""


class ParseError(ShapStabError):
    """A cell could not be parsed; message carries row index and column."""


class IntegrityError(ShapStabError):
    """Structural violation in the input data (e.g. duplicate ids)."""


class ValidationError(ShapStabError):
    """A value or argument is outside its documented domain."""


class EncodingError(ShapStabError):
    """A categorical value was never observed when the encoder was fit."""


class DegenerateSplitError(ShapStabError):
    """A train/test split would leave one side without both classes."""


class TrainingError(ShapStabError):
    """Training inputs cannot produce a valid model (e.g. single-class labels)."""


class DataError(ShapStabError):
    """Non-finite or otherwise unusable numeric data."""


class DimensionError(ShapStabError):
    """Vector or matrix shape does not match the model."""


class ModelIntegrityError(ShapStabError):
    """A model violates its structural invariants (e.g. zero-cover node)."""


class UndefinedMetricError(ShapStabError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""


class AlignmentError(ShapStabError):
    """Per-model results do not share a common feature list."""


class UndefinedStatisticError(ShapStabError):
    """A rank statistic is undefined (fewer than two items or models)."""


class ConfigError(ShapStabError):
    """Experiment configuration is invalid or contains unknown keys."""


class ExperimentError(ShapStabError):
    """One or more model runs inside an experiment failed."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or []
