"""Exception hierarchy shared across the package."""


class NetTriageError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(NetTriageError):
    """A requested tensor shape is degenerate (zero or negative dimension)."""


class ShapeMismatchError(NetTriageError):
    """Operand shapes are incompatible for the requested operation."""


class InvalidSpecError(NetTriageError):
    """A model specification cannot be instantiated."""


class InvalidTapError(NetTriageError):
    """A tap/block index is outside the model's block range."""


class NothingToCompressError(NetTriageError):
    """The addressed block already contains a single convolution."""


class UninitializedLayerError(NetTriageError):
    """A compressed layer is still awaiting an initialization scheme."""


class InvalidPlanError(NetTriageError):
    """Parent/child block shapes are inconsistent for the requested scheme."""


class DegenerateBatchError(NetTriageError):
    """Batch statistics were requested over fewer than two elements."""


class InvalidLabelError(NetTriageError):
    """A class label lies outside [0, num_classes)."""


class EmptyBatchError(NetTriageError):
    """A metric was requested over zero samples."""


class RegistryMismatchError(NetTriageError):
    """Parameter and gradient registries disagree on names or shapes."""


class InvalidMetricError(NetTriageError):
    """A scheduler metric is NaN or otherwise unusable."""


class FormatError(NetTriageError):
    """A binary file does not carry the expected magic/structure."""


class TruncationError(NetTriageError):
    """A binary file ended before its declared payload."""


class ConsistencyError(NetTriageError):
    """Two files that must agree (e.g. image/label counts) do not."""


class UnfittedError(NetTriageError):
    """A preprocessor was applied before its statistics were fitted."""


class CorruptionError(NetTriageError):
    """A checkpoint payload failed its integrity checksum."""


class VersionError(NetTriageError):
    """A checkpoint declares an unsupported format version."""


class SchemaError(NetTriageError):
    """A checkpoint's parameter table disagrees with its model spec."""


class IncompleteResultsError(NetTriageError):
    """A results table is missing grid cells; carries the missing keys."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing {len(self.missing)} grid cell(s): "
                         + ", ".join(map(str, self.missing)))


class MissingArtifactError(NetTriageError):
    """A required checkpoint or result file does not exist."""


class ConfigValidationError(NetTriageError):
    """A run configuration value is out of range; names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataNotFoundError(NetTriageError):
    """Dataset files are absent; message includes a remediation hint."""
