"""Simulated sensors and their digital twins.

A `SensorModel` is the simulation ground truth: a composable signal
plus noise and optional injected drift. Its digital twin holds a
`CalibrationCertificate` and enriches every raw reading with value,
uncertainty, quantity and unit. The twin follows the observer/
controller split: `twin_observe` maintains buffers and running
statistics, `twin_control` is a pure decision table mapping observed
conditions to actions.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvertedRange, NonFiniteRaw, NonMonotonicTimestamp
from .timebase import NS_PER_S, ns_to_rfc3339, ns_to_s, rfc3339_to_ns
from .timesync import ClockModel, local_time, _as_generator
from .uncertainty import Measurement, UncertainVector, combine_linear
from .units import ONE, QuantityKind, Unit, parse_unit

# controller condition flags
DRIFT_SUSPECTED = "drift_suspected"
CERTIFICATE_EXPIRED = "certificate_expired"
OUT_OF_RANGE = "out_of_range"

# controller actions
EMIT_ALERT = "emit_alert"
REQUEST_RECALIBRATION = "request_recalibration"
ANNOTATE_STREAM = "annotate_stream"


@dataclass(frozen=True)
class CalibrationCertificate:
    """Linear correction value = gain * raw + offset, with uncertainties.

    `u_drift` grows the systematic uncertainty with time since
    calibration; `drift_rate` records the nominal rate for provenance
    but never corrects the value (the twin cannot know the drift sign).
    `degree` is reserved for future polynomial corrections.
    """

    certificate_id: str
    gain: float
    u_gain: float
    offset: float
    u_offset: float
    cov_gain_offset: float
    u_noise: float
    drift_rate: float
    u_drift: float
    calibrated_at: int  # TAI ns
    valid_until: int  # TAI ns
    provenance: str  # laboratory | in_field
    unit: Unit
    quantity_kind: QuantityKind
    degree: int = 1
    metadata: tuple = ()

    def __post_init__(self):
        for name in ("u_gain", "u_offset", "u_noise", "u_drift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if abs(self.cov_gain_offset) > self.u_gain * self.u_offset + 1e-15:
            raise ValueError("cov_gain_offset violates Cauchy-Schwarz")
        if self.valid_until <= self.calibrated_at:
            raise ValueError("valid_until must be after calibrated_at")
        if self.provenance not in ("laboratory", "in_field"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def is_expired(self, t_ns: int) -> bool:
        return t_ns > self.valid_until

    def to_json_dict(self) -> dict:
        return {
            "certificate_id": self.certificate_id,
            "gain": self.gain,
            "u_gain": self.u_gain,
            "offset": self.offset,
            "u_offset": self.u_offset,
            "cov_gain_offset": self.cov_gain_offset,
            "u_noise": self.u_noise,
            "drift_rate": self.drift_rate,
            "u_drift": self.u_drift,
            "calibrated_at": ns_to_rfc3339(self.calibrated_at),
            "valid_until": ns_to_rfc3339(self.valid_until),
            "provenance": self.provenance,
            "unit": self.unit.symbol,
            "quantity_kind": self.quantity_kind.label,
            "degree": self.degree,
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CalibrationCertificate":
        return cls(
            certificate_id=doc["certificate_id"],
            gain=float(doc["gain"]),
            u_gain=float(doc["u_gain"]),
            offset=float(doc["offset"]),
            u_offset=float(doc["u_offset"]),
            cov_gain_offset=float(doc.get("cov_gain_offset", 0.0)),
            u_noise=float(doc["u_noise"]),
            drift_rate=float(doc.get("drift_rate", 0.0)),
            u_drift=float(doc.get("u_drift", 0.0)),
            calibrated_at=rfc3339_to_ns(doc["calibrated_at"]),
            valid_until=rfc3339_to_ns(doc["valid_until"]),
            provenance=doc.get("provenance", "laboratory"),
            unit=parse_unit(doc["unit"]),
            quantity_kind=QuantityKind.from_label(doc["quantity_kind"]),
            degree=int(doc.get("degree", 1)),
            metadata=tuple(sorted(doc.get("metadata", {}).items())),
        )


def load_certificate(path) -> CalibrationCertificate:
    """Read a calibration certificate from its JSON document."""
    with open(path, "r", encoding="utf-8") as fh:
        return CalibrationCertificate.from_json_dict(json.load(fh))


def apply_calibration(
    raw: float, cert: CalibrationCertificate, t_ns: int, *, source_id: str = "sensor"
) -> Measurement:
    """Enrich a raw reading: value = gain * raw + offset.

    The systematic part propagates gain/offset uncertainties and their
    covariance plus a drift term growing with time since calibration,
    via the first-order law with sensitivities (raw, 1, dt). The random
    part is the certificate's per-sample noise. Expired certificates
    still compute (the drift term keeps inflating); expiry is flagged
    by the twin, not here.
    """
    if not math.isfinite(raw):
        raise NonFiniteRaw(repr(raw))
    dt_s = ns_to_s(t_ns - cert.calibrated_at)
    inputs = UncertainVector(
        values=(cert.gain, cert.offset, 0.0),
        covariance=(
            (cert.u_gain ** 2, cert.cov_gain_offset, 0.0),
            (cert.cov_gain_offset, cert.u_offset ** 2, 0.0),
            (0.0, 0.0, cert.u_drift ** 2),
        ),
        units=(ONE, cert.unit, ONE),
        systematic=(True, True, True),
    )
    propagated = combine_linear(
        (raw, 1.0, dt_s),
        inputs,
        cert.unit,
        quantity_kind=cert.quantity_kind,
        timestamp=t_ns,
        source_id=source_id,
    )
    return replace(propagated, u_random=cert.u_noise)


# --- simulated physical sensor ---

def evaluate_signal(terms, t_s: float) -> float:
    """Ground-truth signal value from composable primitives.

    Terms: {"kind": "constant", "level"}, {"kind": "ramp", "rate",
    ["start_s"]}, {"kind": "sine", "amplitude", "period_s", ["phase"]},
    {"kind": "step", "time_s", "height"}.
    """
    total = 0.0
    for term in terms:
        kind = term["kind"]
        if kind == "constant":
            total += term["level"]
        elif kind == "ramp":
            total += term["rate"] * (t_s - term.get("start_s", 0.0))
        elif kind == "sine":
            phase = term.get("phase", 0.0)
            total += term["amplitude"] * math.sin(
                2.0 * math.pi * t_s / term["period_s"] + phase
            )
        elif kind == "step":
            if t_s >= term["time_s"]:
                total += term["height"]
        else:
            raise ValueError(f"unknown signal term kind {kind!r}")
    return total


@dataclass
class SensorModel:
    """Simulation ground truth for one physical sensor."""

    sensor_id: str
    signal: tuple  # tuple of term dicts, see evaluate_signal
    noise_sigma: float
    sample_period_ns: int
    attached_clock: str = ""
    bias_drift_rate: float = 0.0  # injected fault, raw units per second
    drift_start_ns: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.sample_period_ns <= 0:
            raise ValueError("sample_period must be positive")

    def true_value(self, t_ns: int) -> float:
        return evaluate_signal(self.signal, ns_to_s(t_ns))


def sample_sensor(
    model: SensorModel, sim_time_ns: int, rng, clock: ClockModel = None
):
    """Draw one raw reading; returns (raw, local_timestamp_ns).

    raw = signal(t) + N(0, noise_sigma) + injected drift. The local
    timestamp is the node clock's view of the sample instant (identity
    when no clock is attached).
    """
    rng = _as_generator(rng)
    raw = model.true_value(sim_time_ns)
    if model.noise_sigma > 0:
        raw += rng.normal(0.0, model.noise_sigma)
    if model.bias_drift_rate and sim_time_ns >= model.drift_start_ns:
        raw += model.bias_drift_rate * ns_to_s(sim_time_ns - model.drift_start_ns)
    if clock is not None:
        local_ts = local_time(clock, sim_time_ns, rng)
    else:
        local_ts = sim_time_ns
    return raw, local_ts


# --- observer / controller twin ---

@dataclass
class RunningStats:
    """Welford running mean/variance plus an arrival-rate estimate."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    first_ts: int = None
    last_ts: int = None

    def push(self, value: float, t_ns: int):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)
        if self.first_ts is None:
            self.first_ts = t_ns
        self.last_ts = t_ns

    @property
    def variance(self) -> float:
        if self.count < 2:
            return 0.0
        return self.m2 / (self.count - 1)

    @property
    def rate_hz(self) -> float:
        if self.count < 2 or self.last_ts == self.first_ts:
            return 0.0
        return (self.count - 1) / ns_to_s(self.last_ts - self.first_ts)


@dataclass
class TwinState:
    """One digital twin: certificate, buffer, observer stats, flags."""

    certificate: CalibrationCertificate
    capacity: int = 4096
    plausible_range: tuple = None  # (low, high) in calibrated units
    buffer: deque = None
    observer: RunningStats = field(default_factory=RunningStats)
    flags: set = field(default_factory=set)
    dropped_samples: int = 0

    def __post_init__(self):
        if self.buffer is None:
            self.buffer = deque(maxlen=self.capacity)


def twin_observe(state: TwinState, m: Measurement) -> TwinState:
    """Fold one enriched sample into the twin's observer state.

    Non-monotonic samples are dropped and counted rather than raised;
    process streams must not stop.
    """
    if state.buffer and m.timestamp <= state.buffer[-1].timestamp:
        state.dropped_samples += 1
        return state
    state.buffer.append(m)
    state.observer.push(m.value, m.timestamp)
    if state.plausible_range is not None:
        low, high = state.plausible_range
        if not low <= m.value <= high:
            state.flags.add(OUT_OF_RANGE)
    if state.certificate.is_expired(m.timestamp):
        state.flags.add(CERTIFICATE_EXPIRED)
    return state


def twin_control(state: TwinState, directives=()) -> set:
    """Pure decision table from flags and external directives to actions."""
    actions = set()
    if DRIFT_SUSPECTED in state.flags:
        actions.add(REQUEST_RECALIBRATION)
    if CERTIFICATE_EXPIRED in state.flags:
        actions.add(REQUEST_RECALIBRATION)
    if OUT_OF_RANGE in state.flags:
        actions.add(EMIT_ALERT)
    for directive in directives:
        if directive == "force_recalibration":
            actions.add(REQUEST_RECALIBRATION)
        elif directive == "annotate":
            actions.add(ANNOTATE_STREAM)
    return actions


def request_enriched(state: TwinState, t_from: int, t_to: int) -> list:
    """Buffered measurements with t_from <= timestamp <= t_to (closed)."""
    if t_from > t_to:
        raise InvertedRange(f"{t_from} > {t_to}")
    return [m for m in state.buffer if t_from <= m.timestamp <= t_to]
