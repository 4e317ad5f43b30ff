"""Exception types shared across the platform."""


class UphoError(Exception):
    """Base class for all platform errors."""


# --- geometry ---

class DegenerateGeometry(UphoError):
    """Polygon has no usable area."""


class TooFewUnits(UphoError):
    """An operation needs more geographic units than were supplied."""


# --- catalog ---

class DuplicateKey(UphoError):
    """Indicator key already registered."""


# --- ingestion ---

class SchemaMismatch(UphoError):
    """A CSV header does not match the expected schema."""


class EmptyFile(UphoError):
    """Input stream contained no data."""


class InsufficientUnits(UphoError):
    """Consolidated frame has too few units for the requested model."""


class UnknownIndicator(UphoError):
    """Requested indicator key is absent from the indicator table."""


# --- regression ---

class InsufficientRows(UphoError):
    """Not enough observations for the number of predictors."""


class SingularDesign(UphoError):
    """Design matrix is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class NonpositiveBandwidth(UphoError):
    """Kernel bandwidth must be strictly positive."""


class SingularLocalFit(UphoError):
    """A local weighted fit is rank deficient at one location."""

    def __init__(self, location, message=None):
        super().__init__(
            message
            or f"local fit singular at location {location}; try a larger bandwidth"
        )
        self.location = location


class NoFeasibleBandwidth(UphoError):
    """No bandwidth gives every location enough nonzero weights."""


class FrameMismatch(UphoError):
    """Two model results were not fitted on the same frame."""


class ZeroVarianceColumn(UphoError):
    """A column cannot be standardized because its variance is zero."""


# --- hotspot ---

class SeriesTooShort(UphoError):
    """Time series is shorter than the method requires."""


# --- causal ---

class LengthMismatch(UphoError):
    """Paired vectors have different lengths."""


class ZeroVariance(UphoError):
    """A rank correlation is undefined because one vector is all ties."""


class PrePeriodTooShort(UphoError):
    """Pre-intervention series is too short to fit the state-space model."""


class InsufficientPrePeriod(UphoError):
    """Intervention leaves too few pre-period observations."""


class InterventionOutOfRange(UphoError):
    """Intervention date falls outside the observed series."""


class NoIndicatorsSelected(UphoError):
    """No candidate indicators matched the requested domains."""


# --- results repository ---

class RepoLocked(UphoError):
    """Another writer holds the repository lock."""


class WriteFailed(UphoError):
    """A repository write could not be completed."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class NotFound(UphoError):
    """No stored result for the requested key."""


class DigestMismatch(UphoError):
    """Stored payload bytes do not match the recorded digest."""
