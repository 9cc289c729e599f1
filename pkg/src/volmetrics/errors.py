"""Exception types shared across the toolkit."""


class VolmetricsError(Exception):
    """Base class for all toolkit errors."""


# --- field / shape errors ---------------------------------------------------

class DegenerateRange(VolmetricsError):
    """Joint min equals joint max, so a min-max normalization is undefined."""


class NonCubicField(VolmetricsError):
    """Operation requires equal extents along all three spatial axes."""


class IndivisibleDims(VolmetricsError):
    """Spatial dims are not divisible by the requested pooling factor."""


class ShapeMismatch(VolmetricsError):
    """Two operands do not share the required shape."""


class FieldTooSmall(VolmetricsError):
    """Field extents are below the minimum a kernel or window requires."""


# --- statistics -------------------------------------------------------------

class ConstantInput(VolmetricsError):
    """A correlation was requested on a constant sequence."""


class InfinitePSNR(VolmetricsError):
    """PSNR is unbounded because the mean squared error is zero."""


class TooShort(VolmetricsError):
    """Sequence has too few entries for the requested fit."""


# --- data generation --------------------------------------------------------

class UnknownParam(VolmetricsError):
    """Varied-parameter id is not in the perturbable set."""


class CalibrationDiverged(VolmetricsError):
    """Difficulty calibration did not reach the target band."""


class OutOfBounds(VolmetricsError):
    """A cutout window leaves the repository bounds."""


# --- network / training -----------------------------------------------------

class EmptyStream(VolmetricsError):
    """Feature-normalization stream yielded no samples."""


class IndivisibleSliceSize(VolmetricsError):
    """Slice size does not divide the distance-vector length."""


class ConstantGroundTruth(VolmetricsError):
    """Ground-truth distances are constant; the correlation term is undefined."""


class NonFiniteLoss(VolmetricsError):
    """Training produced a NaN or Inf loss."""


# --- storage ----------------------------------------------------------------

class BadMagic(VolmetricsError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(VolmetricsError):
    """File declares a format version this build does not understand."""


class TruncatedFile(VolmetricsError):
    """File is shorter than its header declares."""


class ShapeOverflow(VolmetricsError):
    """Declared dims are implausibly large or overflow the sample count."""


class ArchitectureMismatch(VolmetricsError):
    """Checkpoint tensor shapes disagree with the declared architecture."""
