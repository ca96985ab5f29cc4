"""Redundancy exploitation: drift detection and in-field recalibration.

With several sensors observing the same quantity, a leave-one-out
inverse-variance consensus serves as the reference for each sensor.
The normalized error over a window, |mean difference| divided by the
combined uncertainty of the difference, scores drift; flagged sensors
get a new gain/offset certificate fitted against the consensus by
weighted least squares, with parameter uncertainties from the fit
covariance. The sensor under test never contributes to its own
reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientPairs,
    InsufficientRedundancy,
    RankDeficient,
    WindowTooSmall,
)
from .fusion import virtual_sensor_fuse
from .timebase import ns_to_rfc3339, s_to_ns
from .twin import CalibrationCertificate
from .uncertainty import Measurement, _fsum


@dataclass(frozen=True)
class DriftReport:
    sensor_id: str
    window: tuple  # (from_ns, to_ns)
    normalized_error: float
    threshold_k: float
    flagged: bool
    consensus_trace: str

    def __post_init__(self):
        if self.normalized_error < 0:
            raise ValueError("normalized error must be >= 0")
        if self.flagged != (self.normalized_error > self.threshold_k):
            raise ValueError("flagged must equal normalized_error > threshold_k")

    def to_json_dict(self) -> dict:
        return {
            "kind": "drift_report",
            "sensor_id": self.sensor_id,
            "window_from_ns": self.window[0],
            "window_to_ns": self.window[1],
            "normalized_error": self.normalized_error,
            "threshold_k": self.threshold_k,
            "flagged": self.flagged,
            "consensus_trace": self.consensus_trace,
        }


@dataclass(frozen=True)
class RecalibrationResult:
    new_certificate: CalibrationCertificate
    fit_residual_rms: float
    n_points: int
    condition_number: float

    def to_json_dict(self) -> dict:
        return {
            "kind": "recalibration",
            "certificate": self.new_certificate.to_json_dict(),
            "fit_residual_rms": self.fit_residual_rms,
            "n_points": self.n_points,
            "condition_number": self.condition_number,
        }


def consensus_estimate(aligned, exclude: str = None) -> Measurement:
    """Inverse-variance consensus over simultaneous redundant sensors.

    Needs at least 3 inputs overall and 2 after excluding the sensor
    under test, so no sensor is ever its own reference.
    """
    aligned = list(aligned)
    if len(aligned) < 3:
        raise InsufficientRedundancy(f"{len(aligned)} sensors, need >= 3")
    kept = [m for m in aligned if m.source_id != exclude]
    if len(kept) < 2:
        raise InsufficientRedundancy("exclusion leaves fewer than 2 references")
    trace = "consensus" if exclude is None else f"consensus_excl_{exclude}"
    return virtual_sensor_fuse(kept, virtual_id=trace)


def _window_mean(window):
    """Mean of a window with its combined uncertainty.

    Random parts average down by 1/N in quadrature; systematic parts
    are fully correlated within a source and average linearly.
    """
    n = len(window)
    mean = _fsum(m.value for m in window) / n
    u_r = math.sqrt(_fsum(m.u_random ** 2 for m in window)) / n
    u_s = _fsum(m.u_systematic for m in window) / n
    return mean, math.hypot(u_r, u_s)


def drift_score(
    sensor_window,
    consensus_window,
    *,
    threshold_k: float = 2.0,
    min_points: int = 10,
) -> DriftReport:
    """Normalized error of a sensor against its leave-one-out consensus."""
    sensor_window = list(sensor_window)
    consensus_window = list(consensus_window)
    if len(sensor_window) < min_points or len(consensus_window) < min_points:
        raise WindowTooSmall(
            f"{min(len(sensor_window), len(consensus_window))} points, "
            f"need >= {min_points}"
        )
    m_s, u_s = _window_mean(sensor_window)
    m_c, u_c = _window_mean(consensus_window)
    denom = math.hypot(u_s, u_c)
    e_n = abs(m_s - m_c) / denom if denom > 0 else (0.0 if m_s == m_c else math.inf)
    return DriftReport(
        sensor_id=sensor_window[0].source_id,
        window=(sensor_window[0].timestamp, sensor_window[-1].timestamp),
        normalized_error=e_n,
        threshold_k=threshold_k,
        flagged=e_n > threshold_k,
        consensus_trace=consensus_window[0].source_id,
    )


def infield_recalibrate(
    raw_values,
    consensus_window,
    *,
    recalibrated_at: int,
    validity_s: float = 86_400.0,
    certificate_id: str = "infield",
    offset_only_fallback: bool = True,
    gain_span_factor: float = 10.0,
    drift_rate: float = 0.0,
    u_drift: float = 0.0,
    min_pairs: int = 30,
) -> RecalibrationResult:
    """Fit a new gain/offset certificate against the consensus.

    Weighted least squares of consensus values on raw readings with
    weights 1/u_c^2(consensus). The parameter covariance is scaled by
    the reduced chi-square when it exceeds 1 (conservative against
    misfit), and the per-sample noise is re-estimated from the residual
    spread in excess of the consensus uncertainty. When the raw values
    span too little range to identify the gain, an offset-only fit is
    used (recorded in the certificate metadata) or RankDeficient is
    raised if disabled.
    """
    x = np.asarray(raw_values, dtype=float)
    consensus_window = list(consensus_window)
    y = np.array([m.value for m in consensus_window])
    u = np.array([m.u_c for m in consensus_window])
    if x.size != y.size:
        raise ValueError("raw and consensus windows differ in length")
    if x.size < min_pairs:
        raise InsufficientPairs(f"{x.size} pairs, need >= {min_pairs}")
    if np.any(u <= 0):
        raise ValueError("consensus uncertainties must be > 0")

    proto = consensus_window[0]
    w = 1.0 / (u * u)
    span = float(np.ptp(x))
    identifiable = span > gain_span_factor * float(np.median(u))

    metadata = {}
    if identifiable:
        a_mat = np.column_stack([x, np.ones_like(x)])
        normal = a_mat.T @ (w[:, None] * a_mat)
        cov = np.linalg.inv(normal)
        params = cov @ (a_mat.T @ (w * y))
        gain, offset = float(params[0]), float(params[1])
        resid = y - (gain * x + offset)
        n_params = 2
        condition = float(np.linalg.cond(np.sqrt(w)[:, None] * a_mat))
    elif offset_only_fallback:
        total_w = float(np.sum(w))
        gain = 1.0
        offset = float(np.sum(w * (y - x)) / total_w)
        resid = y - (x + offset)
        cov = np.array([[0.0, 0.0], [0.0, 1.0 / total_w]])
        n_params = 1
        condition = 1.0
        metadata["offset_only"] = True
    else:
        raise RankDeficient(
            f"raw span {span} too small to identify gain (offset-only disabled)"
        )

    chi2 = float(np.sum(w * resid * resid))
    dof = x.size - n_params
    reduced = chi2 / dof if dof > 0 else 1.0
    if reduced > 1.0:
        cov = cov * reduced

    resid_var = float(np.var(resid, ddof=n_params))
    u_noise = math.sqrt(max(resid_var - float(np.mean(u * u)), 0.0))

    cert = CalibrationCertificate(
        certificate_id=certificate_id,
        gain=gain,
        u_gain=math.sqrt(max(cov[0][0], 0.0)),
        offset=offset,
        u_offset=math.sqrt(max(cov[1][1], 0.0)),
        cov_gain_offset=float(cov[0][1]),
        u_noise=u_noise,
        drift_rate=drift_rate,
        u_drift=u_drift,
        calibrated_at=recalibrated_at,
        valid_until=recalibrated_at + s_to_ns(validity_s),
        provenance="in_field",
        unit=proto.unit,
        quantity_kind=proto.quantity_kind,
        metadata=tuple(sorted(metadata.items())),
    )
    return RecalibrationResult(
        new_certificate=cert,
        fit_residual_rms=float(np.sqrt(np.mean(resid * resid))),
        n_points=int(x.size),
        condition_number=condition,
    )


@dataclass(frozen=True)
class RecalibrationPolicy:
    threshold_k: float = 2.0
    min_window_points: int = 10
    cooldown_windows: int = 3
    min_references: int = 2
    offset_only_fallback: bool = True
    min_pairs: int = 30
    validity_s: float = 86_400.0
    u_drift: float = 0.0


@dataclass
class WorkflowEvent:
    report: DriftReport
    recalibration: RecalibrationResult = None
    swapped: bool = False
    error: str = None


def recalibration_workflow(
    aligned_by_sensor: dict,
    raw_by_sensor: dict,
    certificates: dict,
    policy: RecalibrationPolicy,
    *,
    now_ns: int,
    cooldown_state: dict = None,
) -> list:
    """Score every sensor against a consensus of its peers; refit flagged ones.

    Drifting sensors are identified greedily: the worst normalized
    error above threshold is excluded from everyone's reference and the
    remaining sensors are re-scored, so one drifter does not pollute
    the consensus the others are judged against (and simultaneous
    drifters leave a clean reference of the remaining sensors). The
    sensor under test never contributes to its own reference.

    Returns one `WorkflowEvent` per scored sensor; certificate swaps
    are reported, the caller installs them. Per-sensor failures are
    recorded without halting the others. `cooldown_state` (sensor id ->
    remaining windows) suppresses oscillating recalibration and is
    decremented in place.
    """
    cooldown_state = cooldown_state if cooldown_state is not None else {}
    sensor_ids = sorted(aligned_by_sensor)
    n_points = min((len(v) for v in aligned_by_sensor.values()), default=0)

    def consensus_for(sensor_id, suspects):
        excluded = set(suspects) | {sensor_id}
        refs = [s for s in sensor_ids if s not in excluded]
        if len(sensor_ids) < 3 or len(refs) < policy.min_references:
            return None
        trace = "consensus_excl_" + "+".join(sorted(excluded))
        return [
            virtual_sensor_fuse(
                [aligned_by_sensor[s][i] for s in refs], virtual_id=trace
            )
            for i in range(n_points)
        ]

    def score(sensor_id, suspects):
        consensus = consensus_for(sensor_id, suspects)
        if consensus is None:
            return None, None
        report = drift_score(
            aligned_by_sensor[sensor_id][:n_points],
            consensus,
            threshold_k=policy.threshold_k,
            min_points=policy.min_window_points,
        )
        return report, consensus

    # greedy exclusion of drifters from the shared reference
    suspects = []
    while len(sensor_ids) - len(suspects) > policy.min_references:
        worst = None
        for sensor_id in sensor_ids:
            if sensor_id in suspects:
                continue
            try:
                report, _ = score(sensor_id, suspects)
            except WindowTooSmall:
                raise
            except Exception:
                continue
            if report is not None and report.flagged:
                if worst is None or report.normalized_error > worst[1]:
                    worst = (sensor_id, report.normalized_error)
        if worst is None:
            break
        suspects.append(worst[0])

    events = []
    for sensor_id in sensor_ids:
        try:
            report, consensus = score(
                sensor_id, [s for s in suspects if s != sensor_id]
            )
        except Exception as exc:  # keep scoring the other sensors
            events.append(WorkflowEvent(report=None, error=f"{sensor_id}: {exc}"))
            continue
        if report is None:
            continue

        event = WorkflowEvent(report=report)
        remaining = cooldown_state.get(sensor_id, 0)
        if remaining > 0:
            cooldown_state[sensor_id] = remaining - 1
        elif report.flagged:
            try:
                old = certificates[sensor_id]
                result = infield_recalibrate(
                    raw_by_sensor[sensor_id][:n_points],
                    consensus,
                    recalibrated_at=now_ns,
                    validity_s=policy.validity_s,
                    certificate_id=f"{sensor_id}-infield-{now_ns}",
                    offset_only_fallback=policy.offset_only_fallback,
                    u_drift=policy.u_drift if policy.u_drift else old.u_drift,
                    min_pairs=policy.min_pairs,
                )
                event.recalibration = result
                event.swapped = True
                cooldown_state[sensor_id] = policy.cooldown_windows
            except Exception as exc:
                event.error = f"{sensor_id}: {exc}"
        events.append(event)
    return events


def append_audit(path, obj: dict):
    """Append one object to the JSON-lines audit log."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")
