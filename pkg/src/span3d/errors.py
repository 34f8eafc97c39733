"""Exception hierarchy shared across span3d."""


class Span3DError(Exception):
    """Base class for all span3d errors."""


class InvalidArgumentError(Span3DError, ValueError):
    pass


class BehindCameraError(Span3DError, ValueError):
    """A point (or box corner) sits at or behind the ``z_eps`` plane."""

    def __init__(self, message, corner_index=None):
        super().__init__(message)
        self.corner_index = corner_index


class ConfigError(Span3DError, ValueError):
    pass


class ParseError(Span3DError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotReadyError(Span3DError):
    """Not enough loss history to evaluate a trend yet."""


class EmptyStatsError(Span3DError):
    """No samples survived filtering."""
