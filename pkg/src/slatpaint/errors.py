"""Exception hierarchy shared by all slatpaint modules."""


class SlatpaintError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SlatpaintError, ValueError):
    """Array shapes or grid dimensions violate a precondition."""


class SizeError(SlatpaintError, ValueError):
    """An input collection is too small for the requested operation."""


class DegenerateSampleError(SlatpaintError, ValueError):
    """A sample has zero variance, so higher moments are undefined."""


class EmptyInputError(SlatpaintError, ValueError):
    """A point cloud or occupancy set required to be nonempty is empty."""


class ParameterError(SlatpaintError, ValueError):
    """A shape/config parameter lies outside its declared range."""


class ConfigError(SlatpaintError, ValueError):
    """A run configuration is malformed (unknown keys, bad values, missing files)."""


class TrainingError(SlatpaintError, RuntimeError):
    """Training diverged. Carries the step index at which it happened."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class SamplingError(SlatpaintError, RuntimeError):
    """Sampling produced non-finite values. Carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class OptimizationError(SlatpaintError, RuntimeError):
    """Seed optimization produced a non-finite loss. Carries the step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class EmptyStructureError(SlatpaintError, RuntimeError):
    """Sparse-structure sampling decoded to an empty active-voxel set."""


class DegenerateConstraintError(SlatpaintError, ValueError):
    """An observation mask is empty (or empty after intersection), so the
    reconstruction loss is undefined."""
