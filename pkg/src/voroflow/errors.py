"""Exception types shared across the package.

Every error raised by the library derives from VoroflowError so callers can
catch the whole family with one clause.
"""


class VoroflowError(Exception):
    """Base class for all library errors."""


# ---- geometry ----

class ShapeMismatch(VoroflowError):
    """Array arguments have inconsistent or unsupported shapes."""


class NonFiniteInput(VoroflowError):
    """An input array contains NaN or infinity."""


class DuplicateAnchors(VoroflowError):
    """Two anchors are closer than the minimum separation."""


class AnchorOutsideBox(VoroflowError):
    """An anchor is not strictly inside the bounding box."""


class NonPositiveScale(VoroflowError):
    """A per-cell scale is zero or negative."""


class IndexOutOfRange(VoroflowError):
    """A cell index is outside [0, K)."""


# ---- cell maps ----

class NegativeInput(VoroflowError):
    """A quantity that must be non-negative is negative."""


class NonUnitDirection(VoroflowError):
    """A direction vector does not have unit norm."""


class NoExit(VoroflowError):
    """A ray from the anchor never leaves the cell (should be impossible
    for a bounded cell; indicates a degenerate direction)."""


class PointOutsideCell(VoroflowError):
    """The point handed to an inverse map is not inside the stated cell."""


class AlphaOutOfRange(VoroflowError):
    """The normalized radius of an inverse map is not in [0, 1)."""


# ---- autodiff ----

class NonScalarRoot(VoroflowError):
    """backward() was called on a non-scalar value."""


class LogOfNonPositive(VoroflowError):
    """log() received a value that is zero or negative."""


class DivisionByZero(VoroflowError):
    """A divisor contains an exact zero."""


class NoPositiveEntries(VoroflowError):
    """select_min_positive found no positive candidate."""


class TapeNotRecording(VoroflowError):
    """backward() was called on a tape created with record=False."""


# ---- flows and training ----

class NonFiniteActivation(VoroflowError):
    """A coupling network produced NaN or infinity."""


class DivergedLoss(VoroflowError):
    """The training objective became non-finite; the model keeps the last
    parameters that produced a finite validation score."""


# ---- data ----

class EmptyFile(VoroflowError):
    """The CSV has no data rows."""


class RaggedRows(VoroflowError):
    """CSV rows have differing column counts."""


class BadRatios(VoroflowError):
    """Split ratios are invalid (negative or do not sum to one)."""


class VocabMismatch(VoroflowError):
    """Dataset vocabulary does not match the checkpoint's."""


# ---- cli ----

class ConfigInvalid(VoroflowError):
    """A config file has unknown keys, bad types, or out-of-range values."""


class NotTwoDimensional(VoroflowError):
    """Density plotting needs a two-dimensional model."""


class CheckpointInvalid(VoroflowError):
    """A checkpoint file cannot be parsed or has an unsupported schema."""
