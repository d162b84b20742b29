"""Shared exception types.

Everything derives from ValueError so callers that do not care about the
distinction can catch one base class.
"""


class ConfigError(ValueError):
    """A module was wired with incompatible or unsupported settings."""


class ShapeError(ValueError):
    """Tensor shapes violate an operation's contract."""


class UndefinedMetricError(ValueError):
    """The requested metric has no defined value on this input."""


class DegenerateImageError(ValueError):
    """The image carries no usable intensity variation (e.g. constant)."""
