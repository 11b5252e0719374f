"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in gra.cli; library code raises these
directly and never calls sys.exit.
"""


class GraError(Exception):
    """Base class for all package errors."""


class ConfigError(GraError):
    """Invalid configuration value or flag combination."""


class SchemaError(GraError):
    """Data does not conform to the expected column schema."""


class DegenerateColumnError(SchemaError):
    """A continuous column cannot be standardized (zero variance / too few values)."""


class MissingAllValuesError(GraError):
    """A column to impute has no observed values at all."""


class InputError(GraError):
    """Malformed numeric input (non-finite values, labels outside {0,1}, ...)."""


class ShapeError(GraError):
    """Tensor shape incompatible with the requested operation."""


class NumericError(GraError):
    """Non-finite value produced inside a computation."""


class StateError(GraError):
    """Operation invoked without required prior state (e.g. backward without cache)."""


class TrainingError(GraError):
    """Training diverged or failed to meet its own postcondition."""


class EvaluationError(GraError):
    """Metric undefined for the given inputs (single-class labels, n too small)."""


class FormatError(GraError):
    """Corrupt or malformed artifact file."""


class VersionError(FormatError):
    """Artifact written with an unsupported format version."""


class MissingArtifactError(GraError):
    """A required input artifact from an earlier pipeline stage does not exist."""
