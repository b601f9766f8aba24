"""Exception types shared across the package."""


class SplicemapError(Exception):
    """Base class for all errors raised by this package."""


class NotFound(SplicemapError):
    """A referenced input file does not exist."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InconsistentDimensions(SplicemapError):
    """Rasters that must share dimensions do not."""


class UnsupportedFormat(SplicemapError):
    """Input file is not one of the supported image formats / bit depths."""


class PatchTooSmall(SplicemapError):
    """Frame or patch too small for the requested operation."""


class InvalidParameter(SplicemapError, ValueError):
    """A parameter violates its documented precondition."""


class RegionOutOfBounds(SplicemapError):
    """A rectangle does not lie inside its host raster."""


class ShapeError(SplicemapError):
    """Array arguments have incompatible shapes."""


class DegenerateGroundTruth(SplicemapError):
    """Ground truth has no usable positive/negative pixels for a ROC sweep."""
