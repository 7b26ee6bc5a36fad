"""Exception types shared across the pipeline."""


class DeepBBError(Exception):
    """Base class for all package errors."""


class ShapeError(DeepBBError, ValueError):
    pass


class StateError(DeepBBError, RuntimeError):
    pass


class GeometryError(DeepBBError, ValueError):
    pass


class ValidationError(DeepBBError, ValueError):
    """Bad manifest, config or argument value."""


class InsufficientDataError(ValidationError):
    pass


class InfeasibleError(ValidationError):
    pass


class RenderError(DeepBBError, ValueError):
    pass


class FormatError(DeepBBError, ValueError):
    """A file exists but cannot be parsed."""


class PrintabilityError(FormatError):
    """A stored texture contains texels outside its gamut."""


class SpatialConstraintError(DeepBBError, AssertionError):
    """A frame pixel outside the billboard quad was modified."""


class SceneIOError(DeepBBError, OSError):
    """A referenced file is missing or unreadable."""
