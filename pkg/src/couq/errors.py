"""Exception hierarchy shared across the package."""


class CouqError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CouqError):
    """Feature file has a bad magic, header, or trailing bytes."""


class DimensionError(CouqError):
    """A vector's length does not match the declared dimension."""


class DataError(CouqError):
    """A record carries invalid data (non-finite values, duplicate ids)."""


class ScheduleError(CouqError):
    """A task schedule references a class more than once or not at all."""


class InsufficientDataError(CouqError):
    """A class cannot satisfy the requested holdout/test/pool sizes."""


class FitError(CouqError):
    """Not enough samples to fit a subspace."""


class EmptyModelError(CouqError):
    """An operation needs at least one fitted class subspace."""


class StateError(CouqError):
    """Engine state is inconsistent (broken iteration hand-off)."""


class MapperFitError(CouqError):
    """Mapper training input is invalid (e.g. a class with no samples)."""


class OracleError(CouqError):
    """A labeling query referenced an unknown record."""


class RequeryError(CouqError):
    """A record was submitted to the labeling oracle twice."""


class ClassIdError(CouqError):
    """Classifier update received an invalid class-id set."""


class UndefinedMetricError(CouqError):
    """Metric is undefined for the given inputs (e.g. single-class AUROC)."""


class EvalError(CouqError):
    """Evaluation input is incomplete (e.g. a missing prediction)."""


class ConfigError(CouqError):
    """Experiment configuration failed validation."""


class CheckpointError(CouqError):
    """Checkpoint file is malformed or truncated."""
