"""Exception hierarchy.

Domain errors derive from :class:`MrAnchorError`; the CLI maps them to exit
code 1 and I/O or format problems (:class:`FormatError`) to exit code 2.
"""


class MrAnchorError(Exception):
    """Base class for every domain error raised by the package."""


class NonMonotonicTimestamps(MrAnchorError):
    pass


class StreamMismatch(MrAnchorError):
    pass


class InsufficientMotion(MrAnchorError):
    pass


class InsufficientPairs(MrAnchorError):
    pass


class DegenerateMotion(MrAnchorError):
    pass


class InvalidDepth(MrAnchorError):
    pass


class TooFewCorners(MrAnchorError):
    pass


class DegenerateCorners(MrAnchorError):
    pass


class NoKnownMarkers(MrAnchorError):
    pass


class EmptyTrack(MrAnchorError):
    pass


class TooSparse(MrAnchorError):
    pass


class NoCorrespondences(MrAnchorError):
    pass


class EmptyROI(MrAnchorError):
    pass


class NotConverged(MrAnchorError):
    pass


class FrameMismatch(MrAnchorError):
    pass


class FormatError(Exception):
    """Malformed input file or unreadable path (not a domain failure)."""
