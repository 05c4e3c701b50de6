"""Exception types shared across the package.

Every error carries a stable ``code`` string; the CLI prefixes diagnostics
with it so scripts can match on error classes without parsing messages.
"""


class PathaugError(Exception):
    """Base class for all pathaug errors."""

    code = "E_GENERIC"


class IoError(PathaugError):
    """File missing, unreadable, or unwritable."""

    code = "E_IO"


class DecodeError(PathaugError):
    """Malformed image file or unsupported encoding (e.g. 16-bit PNG)."""

    code = "E_DECODE"


class OutOfBounds(PathaugError):
    """Crop rectangle not contained in the source image."""

    code = "E_BOUNDS"


class WrongSpace(PathaugError):
    """Planes tagged with a different color space than the operation expects."""

    code = "E_SPACE"


class SpaceMismatch(PathaugError):
    """Statistics entries from mixed color spaces passed to a single-space fit."""

    code = "E_SPACE_MISMATCH"


class InsufficientData(PathaugError):
    """Too few statistics entries for the requested fit."""

    code = "E_DATA"


class DegenerateComponent(PathaugError):
    """A mixture component stayed non-positive-definite after regularization."""

    code = "E_DEGENERATE"


class SchemaError(PathaugError):
    """Model or stats file violates the expected schema or version."""

    code = "E_SCHEMA"


class ModelMissingSpace(PathaugError):
    """Stain model lacks one of the HSV/LAB/HED blocks required here."""

    code = "E_MODEL_SPACE"


class TooSmall(PathaugError):
    """Image smaller than the operation's minimum size."""

    code = "E_TOO_SMALL"


class DuplicateLevel(PathaugError):
    """Two slide levels share the same (slide id, magnification)."""

    code = "E_DUP_LEVEL"


class ShapeError(PathaugError):
    """Array buffer has the wrong shape, dtype, or layout."""

    code = "E_SHAPE"


class EmptyCorpus(PathaugError):
    """No readable images found in the input directory."""

    code = "E_EMPTY"


class ConfigError(PathaugError):
    """Invalid pipeline configuration (unknown step kind, missing model, ...)."""

    code = "E_CONFIG"
