"""Exception types shared across the detection pipeline."""


class LampDetError(Exception):
    """Base class for all library errors."""


# -- geometry ---------------------------------------------------------------

class InvalidRotation(LampDetError):
    """Matrix is not a proper rotation (orthonormal, det +1)."""


class InvalidNormal(LampDetError):
    """Vector expected to be unit length is not."""


class BehindCamera(LampDetError):
    """Point projects at or behind the camera plane."""


# -- optimization -----------------------------------------------------------

class NonFiniteResidual(LampDetError):
    """Residual evaluation produced NaN or infinity."""


# -- building geometry ------------------------------------------------------

class MissingFile(LampDetError):
    pass


class SchemaError(LampDetError):
    pass


class NonCoplanarSurface(LampDetError):
    pass


class NoCeilingAvailable(LampDetError):
    """Embedded mounting requested but the building has no ceiling surfaces."""


# -- shape extraction -------------------------------------------------------

class DegenerateBlob(LampDetError):
    """Blob too small to trace a boundary."""


class TooFewVertices(LampDetError):
    """Polygon simplification left fewer than the required vertex count."""


class EllipseFitFailure(LampDetError):
    """Conic fit did not produce a valid ellipse."""


# -- pose estimation --------------------------------------------------------

class DegenerateConfiguration(LampDetError):
    """Point configuration unusable for pose recovery (e.g. collinear)."""


class NoValidPose(LampDetError):
    """No recovered pose places the object in front of the camera."""


class ShapeModelMismatch(LampDetError):
    """Observed shape is incompatible with the lamp model face."""


class RaysParallelToPlane(LampDetError):
    """Too many viewing rays are parallel to the circle plane."""


class EstimationFailed(LampDetError):
    pass


# -- chamfer matching -------------------------------------------------------

class NoVisibleTemplate(LampDetError):
    """No template point projects inside the image."""


# -- reprojection filter ----------------------------------------------------

class RayParallelToPlane(LampDetError):
    """Single back-projection ray parallel to the object plane."""


class ProjectedAtCenter(LampDetError):
    """Back-projected point coincides with the circle center."""


class TooManyDegeneratePoints(LampDetError):
    """More than the allowed share of contour points failed back-projection."""


class StateUndetermined(LampDetError):
    """Projected lamp face does not cover enough image area to classify."""


# -- pipeline ---------------------------------------------------------------

class IngestError(LampDetError):
    """Input data missing or unreadable beyond the tolerated share."""


class InvalidPath(LampDetError):
    """Trajectory path has fewer than two distinct points."""
