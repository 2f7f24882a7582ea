"""Exception types raised across the pipeline.

Class names follow the operation contracts; CLI maps them to exit codes
(config 2, data 3, numeric 4).
"""


class VsplatError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(VsplatError):
    """Operands have incompatible shapes."""


class GeometryError(VsplatError):
    pass


class BehindCamera(GeometryError):
    """Point maps to camera-frame depth z <= 0."""


class NonPositiveDepth(GeometryError):
    """Unprojection requested with depth <= 0."""


class EmptyMaskRow(VsplatError):
    """Attention mask admits no key for some query row."""


class BadDimensions(VsplatError):
    """Image or grid dimensions violate a layer's divisibility contract."""


class BadRange(VsplatError):
    """Numeric range precondition violated (e.g. far <= near)."""


class ZeroQuaternion(VsplatError):
    """Quaternion with zero norm cannot be normalized."""


class SingularCovariance(VsplatError):
    """Covariance stayed singular after regularization."""


class EmptySet(VsplatError):
    """Point set operation received an empty set."""


class EmptyMask(VsplatError):
    """Masked reduction received a mask with no valid entries."""


class TooSmall(VsplatError):
    """Input below the minimum size an operation supports."""


class TooFewCandidates(VsplatError):
    """Sampling requested more items than candidates available."""


class ConfigError(VsplatError):
    """Invalid run configuration (CLI exit code 2)."""


class DataError(VsplatError):
    """Invalid or missing on-disk data (CLI exit code 3)."""


class MissingFile(DataError):
    pass


class MalformedJson(DataError):
    """Malformed or semantically invalid bundle metadata."""


class ResolutionMismatch(DataError):
    """Views in one bundle disagree on resolution."""


class NumericFailure(VsplatError):
    """Non-finite loss or value during training (CLI exit code 4)."""
