"""
Exception hierarchy shared by the library and the command line
"""
from .constants import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_NUMERIC_ABORT


class AalbertError(Exception):
    """Base class for every error the toolkit raises on purpose."""

    kind = "error"
    exit_code = EXIT_CONFIG_ERROR


class ConfigError(AalbertError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    kind = "config"
    exit_code = EXIT_CONFIG_ERROR


class DataError(AalbertError):
    """Corpus, feature or checkpoint content that cannot be used."""

    kind = "data"
    exit_code = EXIT_DATA_ERROR


class ShapeError(DataError, ValueError):
    """Operand shapes disagree."""

    kind = "shape"

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " and ".join(str(s) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class MissingLabelsError(DataError):
    kind = "labels"


class CheckpointError(DataError):
    kind = "checkpoint"


class CheckpointReadError(CheckpointError):
    """The weight file is missing or cannot be read."""

    kind = "checkpoint-read"


class CheckpointFormatError(CheckpointError):
    kind = "checkpoint-format"


class CheckpointVersionError(CheckpointError):
    kind = "checkpoint-version"


class CheckpointTruncatedError(CheckpointError):
    kind = "checkpoint-truncated"


class CheckpointShapeError(CheckpointError):
    kind = "checkpoint-shape"


class FeatureFileError(DataError):
    kind = "feature"


class FeatureFileMagicError(FeatureFileError):
    kind = "feature-magic"


class FeatureFileTruncatedError(FeatureFileError):
    kind = "feature-truncated"


class FeatureFileShapeError(FeatureFileError):
    kind = "feature-shape"


class NumericalAbort(AalbertError):
    """Training produced a non-finite loss and was stopped."""

    kind = "numeric"
    exit_code = EXIT_NUMERIC_ABORT
