"""Exception types shared across the package."""


class DgclError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(DgclError):
    """Operands have incompatible shapes; the message names both."""


class DegenerateFeatureError(DgclError):
    """A feature row has (near-)zero norm and no usable direction."""


class NonScalarLossError(DgclError):
    """backward() was asked to differentiate a node that is not 1x1."""


class LabelRangeError(DgclError):
    """A class label lies outside the declared range."""


class UnknownTaskError(DgclError):
    """An item referenced a task id with no registered buffer or head."""


class DuplicateTaskError(DgclError):
    """A task id was registered twice."""


class NoHeadsError(DgclError):
    """The model has no classification heads yet."""


class OverlappingClassesError(DgclError):
    """Two tasks share class ids; task class sets must be disjoint."""


class UndefinedMetricError(DgclError):
    """The metric is undefined for this matrix size (FM needs T >= 2)."""


class FileFormatError(DgclError):
    """Base class for binary container parsing failures."""


class BadMagicError(FileFormatError):
    """The file does not start with the expected magic bytes."""


class VersionMismatchError(FileFormatError):
    """The container version is not supported by this reader."""


class TruncatedFileError(FileFormatError):
    """The file ended before its declared payload was complete."""


class ConfigError(DgclError):
    """A run configuration failed to parse or validate."""
