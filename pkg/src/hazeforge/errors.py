"""Exception types shared across the package."""


class HazeforgeError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(HazeforgeError, ValueError):
    """A parameter lies outside its documented domain."""


class RasterError(HazeforgeError, ValueError):
    """A raster has the wrong shape or holds invalid samples."""


class DepthFormatError(HazeforgeError, ValueError):
    """A depth file does not parse per its declared format."""


class DegenerateDepthError(HazeforgeError, ValueError):
    """A depth raster that cannot define a haze density (e.g. all zeros)."""


class DatasetError(HazeforgeError, RuntimeError):
    """Dataset discovery or batch assembly failed."""


class AnnotationParseError(HazeforgeError, ValueError):
    """A ground-truth or detection file line does not parse."""


class ProtocolError(HazeforgeError, RuntimeError):
    """A malformed frame on the streaming wire protocol."""
