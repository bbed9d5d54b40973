"""Exception types shared across the package."""


class OutpaintError(Exception):
    """Base class for all package errors."""


class GeometryError(OutpaintError):
    """Sizes that violate the masking/downsampling arithmetic."""


class ShapeError(OutpaintError):
    """Tensor shapes inconsistent with an operation's contract."""


class ConfigError(OutpaintError):
    """Malformed or inconsistent configuration."""


class DataError(OutpaintError):
    """Dataset problems: unreadable directories, no usable images."""


class CheckpointError(OutpaintError):
    """Corrupt, truncated, or incompatible checkpoint files."""


class TrainingError(OutpaintError):
    """Numerical failures during optimization (non-finite losses)."""
