"""Exception hierarchy shared by all metrotwin modules."""


class MetroTwinError(Exception):
    """Base class for all metrotwin errors."""


# --- uncertainty propagation ---

class DimensionMismatch(MetroTwinError):
    """Unit algebra of an operation does not close."""


class LengthMismatch(MetroTwinError):
    """Vector arguments disagree in length."""


class NonPSDCovariance(MetroTwinError):
    """Quadratic form of a covariance went negative beyond tolerance."""


class NonPSDCorrelation(MetroTwinError):
    """Correlation matrix is not positive semi-definite."""


class ModelEvaluationFailure(MetroTwinError):
    """Monte Carlo model returned a non-finite value."""

    def __init__(self, draw_index: int):
        self.draw_index = draw_index
        super().__init__(f"model produced a non-finite output at draw {draw_index}")


# --- fusion ---

class MixedUnits(MetroTwinError):
    """Samples in one stream disagree on unit or quantity kind."""


class NonUniformSpacing(MetroTwinError):
    """FIR filtering requires uniformly spaced samples."""


class FilterLongerThanStream(MetroTwinError):
    """FIR filter has more taps than the stream has samples."""


class ZeroUncertaintyInput(MetroTwinError):
    """Inverse-variance fusion cannot weight an exact input."""


# --- sensor twin ---

class NonFiniteRaw(MetroTwinError):
    """Raw sensor reading is NaN or infinite."""


class NonMonotonicTimestamp(MetroTwinError):
    """Sample timestamp does not advance past the buffered history."""


class InvertedRange(MetroTwinError):
    """Query range has from > to."""


# --- time synchronization ---

class NegativeDelay(MetroTwinError):
    """Two-way exchange implies a negative mean path delay."""


class DegenerateFit(MetroTwinError):
    """Clock discipline fit has no time spread."""


class UnknownNode(MetroTwinError):
    """Sample refers to a node without a clock estimate."""


class EmptyStream(MetroTwinError):
    """Stream alignment received an empty stream."""


class GridOutsideStream(MetroTwinError):
    """No grid point falls inside the streams' common time span."""


class UnknownStreamRef(MetroTwinError):
    """Virtual sensor rule references a stream that does not exist."""


# --- redundancy / recalibration ---

class InsufficientRedundancy(MetroTwinError):
    """Too few sensors for a leave-one-out consensus."""


class WindowTooSmall(MetroTwinError):
    """Drift scoring window holds fewer aligned points than required."""


class RankDeficient(MetroTwinError):
    """Calibration fit design matrix is not identifiable."""


class InsufficientPairs(MetroTwinError):
    """Too few (raw, consensus) pairs for an in-field fit."""


# --- scenario / persistence ---

class ParseError(MetroTwinError):
    """Scenario file could not be read or parsed."""


class ValidationError(MetroTwinError):
    """Scenario config is invalid; carries all detected problems."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class UnknownStream(MetroTwinError):
    """Export refers to a stream absent from the run directory."""
