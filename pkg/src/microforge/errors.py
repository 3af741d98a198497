"""Exception types raised by microforge operations."""


class MicroforgeError(Exception):
    """Base class for all microforge errors."""


class NotFound(MicroforgeError, FileNotFoundError):
    """Input file does not exist."""


class UnsupportedFormat(MicroforgeError, ValueError):
    """Image file is not 8-bit grayscale PNG or binary PGM."""


class PatchTooLarge(MicroforgeError, ValueError):
    """Requested patch size exceeds the source image."""


class OddDimension(MicroforgeError, ValueError):
    """Operation requires even spatial extents."""


class ShapeMismatch(MicroforgeError, ValueError):
    """Operand shapes are incompatible."""


class BadOverlap(MicroforgeError, ValueError):
    """Quilting overlap must satisfy 1 <= overlap < patch size."""


class NonIntegralOutput(MicroforgeError, ValueError):
    """Convolution geometry does not produce an integral output size."""


class NonScalarLoss(MicroforgeError, ValueError):
    """backward() requires a scalar loss tensor."""


class ResolutionNotInSchedule(MicroforgeError, ValueError):
    """Requested resolution is not part of the progressive schedule."""


class ResolutionMismatch(MicroforgeError, ValueError):
    """Input resolution does not match the current phase."""


class VariantDisabled(MicroforgeError, ValueError):
    """Operation requires the resolution-increase variant to be enabled."""


class ConfigInvalid(MicroforgeError, ValueError):
    """Training configuration failed validation."""


class BadTarget(MicroforgeError, ValueError):
    """Target resolution must be a power of two >= the start resolution."""


class CorruptFile(MicroforgeError, ValueError):
    """Serialized container is truncated or malformed."""


class VersionMismatch(MicroforgeError, ValueError):
    """Serialized container has an unsupported format version."""


class EvenKernel(MicroforgeError, ValueError):
    """Filter window must be odd."""


class DegenerateImage(MicroforgeError, ValueError):
    """Image has a single intensity; no threshold separates two classes."""


class EmptySet(MicroforgeError, ValueError):
    """Aggregation over an empty sample collection."""


class MetricMismatch(MicroforgeError, ValueError):
    """Compared statistics do not cover the same metrics."""


class SingularSystem(MicroforgeError, RuntimeError):
    """Linear solver hit a breakdown (non-SPD system)."""


class NotConverged(MicroforgeError, RuntimeError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, iterations, residual=None):
        self.iterations = iterations
        self.residual = residual
        msg = f"no convergence after {iterations} iterations"
        if residual is not None:
            msg += f" (relative residual {residual:.3e})"
        super().__init__(msg)


class ValidationError(MicroforgeError, ValueError):
    """Pipeline configuration failed validation."""


class StageError(MicroforgeError, RuntimeError):
    """A pipeline stage failed; carries the stage tag."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
