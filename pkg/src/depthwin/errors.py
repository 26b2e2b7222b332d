"""Exception hierarchy shared by every module."""


class DepthwinError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(DepthwinError, ValueError):
    pass


class DegenerateOrientationError(DepthwinError, ValueError):
    """Euler decomposition requested too close to gimbal lock."""


class DegenerateOverlapError(DepthwinError, RuntimeError):
    """No usable pixels survived warping at some scale.

    ``scale`` and ``pairs`` identify where the overlap collapsed.
    """

    def __init__(self, message, scale=None, pairs=None):
        super().__init__(message)
        self.scale = scale
        self.pairs = pairs or []


class DegenerateGeometryError(DepthwinError, ValueError):
    pass


class InvalidSceneError(DepthwinError, ValueError):
    pass


class FormatError(DepthwinError, ValueError):
    """Malformed file. ``offset`` is a byte offset or line number."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    pass


class EmptyTrajectoryError(FormatError):
    pass
