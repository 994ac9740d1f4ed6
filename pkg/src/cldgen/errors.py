"""Exception types shared across the package."""


class CldgenError(Exception):
    """Base class for all package-specific errors."""


class SingularMatrixError(CldgenError):
    """A 2x2 block is singular (or not positive definite) where it must not be."""


class InvalidTimeError(CldgenError):
    """A diffusion time outside the valid range was requested."""


class ShapeMismatchError(CldgenError):
    """Array shapes are inconsistent with the network architecture."""


class LengthMismatchError(CldgenError):
    """Two 1-d sample sets of different lengths were passed where equal lengths are required."""


class DimensionMismatchError(CldgenError):
    """Two sample sets live in different ambient dimensions."""


class InvalidSpecError(CldgenError):
    """A dataset or mixture specification is internally inconsistent."""


class BadMagicError(CldgenError):
    """A binary file does not start with the expected magic bytes."""


class VersionMismatchError(CldgenError):
    """A binary file uses an unsupported format version."""


class CorruptLengthError(CldgenError):
    """A binary file is truncated or its length fields are inconsistent."""


class CheckpointMismatchError(CldgenError):
    """A checkpoint's architecture is incompatible with the requested run."""


class NonFiniteLossError(CldgenError):
    """The training loss became NaN or infinite."""


class NonFiniteStateError(CldgenError):
    """A sampler state became NaN or infinite."""


class ConfigError(CldgenError):
    """A run configuration is malformed or contains unknown keys."""
