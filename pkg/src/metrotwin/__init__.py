"""metrotwin: measurement-uncertainty-aware sensor network simulation.

Calibrated sensor twins emit uncertainty-enriched values, a collector
time-aligns them across synchronized clocks, fusion operators propagate
uncertainty to first order (with a Monte Carlo cross-check), and
cross-sensor redundancy drives drift detection and in-field
recalibration.
"""

from . import errors, units
from .errors import (
    DegenerateFit,
    DimensionMismatch,
    EmptyStream,
    FilterLongerThanStream,
    GridOutsideStream,
    InsufficientPairs,
    InsufficientRedundancy,
    InvertedRange,
    LengthMismatch,
    MetroTwinError,
    MixedUnits,
    ModelEvaluationFailure,
    NegativeDelay,
    NonFiniteRaw,
    NonMonotonicTimestamp,
    NonPSDCorrelation,
    NonPSDCovariance,
    NonUniformSpacing,
    ParseError,
    RankDeficient,
    UnknownNode,
    UnknownStream,
    UnknownStreamRef,
    ValidationError,
    WindowTooSmall,
    ZeroUncertaintyInput,
)
from .units import Unit, QuantityKind, check_dimensions, parse_unit
from .uncertainty import (
    DistributionSpec,
    Measurement,
    MonteCarloResult,
    UncertainVector,
    combine_linear,
    coverage_interval,
    monte_carlo_propagate,
)
from .fusion import (
    FirFilter,
    Label,
    LabeledValue,
    fir_low_pass,
    label_with_uncertainty,
    virtual_sensor_fuse,
    window_average,
)
from .twin import (
    CalibrationCertificate,
    SensorModel,
    TwinState,
    apply_calibration,
    load_certificate,
    request_enriched,
    sample_sensor,
    twin_control,
    twin_observe,
)
from .timesync import (
    ClockEstimate,
    ClockModel,
    SyncConfig,
    SyncExchange,
    align_streams,
    collect,
    discipline_clock,
    estimate_offset,
    local_time,
    run_virtual_sensor_rule,
    simulate_exchange,
)
from .redundancy import (
    DriftReport,
    RecalibrationPolicy,
    RecalibrationResult,
    consensus_estimate,
    drift_score,
    infield_recalibrate,
    recalibration_workflow,
)
from .scenario import ScenarioConfig, load_scenario, run_scenario
from .submodel import Submodel, SubmodelElement, export_submodel

__version__ = "0.1.0"
