"""Sensor fusion operators with uncertainty propagation.

Four operators: window averaging, FIR low-pass filtering, inverse-
variance fusion of redundant sensors into one virtual sensor, and
threshold labeling with the probability of a wrong label. Random and
systematic uncertainty parts propagate differently: random parts add in
quadrature (and shrink under averaging), systematic parts are fully
correlated within a source and pass through linear gain.

Sums over samples use exact summation, so results are bit-identical
under input reordering. All operators are pure stream transformers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    FilterLongerThanStream,
    MixedUnits,
    NonUniformSpacing,
    ZeroUncertaintyInput,
)
from .uncertainty import Measurement, _fsum


@dataclass(frozen=True)
class FirFilter:
    """FIR coefficients b_0..b_{k-1}; y_n = sum_j b_j x_{n-j}."""

    coefficients: tuple

    def __post_init__(self):
        coeffs = tuple(float(b) for b in self.coefficients)
        if len(coeffs) < 1:
            raise ValueError("filter needs at least one coefficient")
        if not all(math.isfinite(b) for b in coeffs):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def gain(self) -> float:
        return _fsum(self.coefficients)

    @property
    def noise_gain(self) -> float:
        """L2 norm: amplification factor for uncorrelated noise."""
        return math.sqrt(_fsum(b * b for b in self.coefficients))


class Label(Enum):
    BELOW = "below"
    ABOVE = "above"


@dataclass(frozen=True)
class LabeledValue:
    label: Label
    p_wrong: float  # probability the label is on the wrong side
    source: Measurement
    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.p_wrong <= 0.5:
            raise ValueError("p_wrong must lie in [0, 0.5]")


def _check_homogeneous(samples: Sequence[Measurement]):
    first = samples[0]
    for m in samples[1:]:
        if m.unit != first.unit or m.quantity_kind != first.quantity_kind:
            raise MixedUnits(f"{m.source_id} disagrees with {first.source_id}")
        if m.source_id != first.source_id:
            raise MixedUnits("stream operators require a single source")
    ts = [m.timestamp for m in samples]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("samples must be time-ordered")


@dataclass(frozen=True)
class WindowAverageResult:
    measurements: tuple
    gaps: tuple  # (start_ns, end_ns) of windows that held no samples


def window_average(
    samples: Sequence[Measurement],
    window: int,
    *,
    origin: int = None,
) -> WindowAverageResult:
    """Average samples into consecutive windows of `window` nanoseconds.

    Per window: value is the arithmetic mean; u_random follows the
    1/sqrt(N) law (quadrature mean over N for unequal inputs);
    u_systematic passes through as the mean (fully correlated). The
    output timestamp is the window midpoint. Empty interior windows are
    skipped and reported in `gaps`.
    """
    samples = list(samples)
    if not samples:
        return WindowAverageResult((), ())
    if window <= 0:
        raise ValueError("window must be a positive duration")
    _check_homogeneous(samples)
    if origin is None:
        origin = samples[0].timestamp

    buckets: dict[int, list[Measurement]] = {}
    for m in samples:
        buckets.setdefault((m.timestamp - origin) // window, []).append(m)

    out = []
    gaps = []
    for idx in range(min(buckets), max(buckets) + 1):
        start = origin + idx * window
        if idx not in buckets:
            gaps.append((start, start + window))
            continue
        group = buckets[idx]
        n = len(group)
        value = _fsum(m.value for m in group) / n
        u_r = math.sqrt(_fsum(m.u_random ** 2 for m in group)) / n
        u_s = _fsum(m.u_systematic for m in group) / n
        out.append(
            Measurement(
                value=value,
                u_random=u_r,
                u_systematic=u_s,
                unit=group[0].unit,
                quantity_kind=group[0].quantity_kind,
                timestamp=start + window // 2,
                source_id=group[0].source_id,
            )
        )
    return WindowAverageResult(tuple(out), tuple(gaps))


def fir_low_pass(
    samples: Sequence[Measurement], filt: FirFilter
) -> list[Measurement]:
    """Valid-region FIR convolution: the first k-1 outputs are suppressed.

    u_random scales with the filter's L2 norm (per-sample quadrature),
    u_systematic with |sum b_j| (fully correlated within the source).
    """
    samples = list(samples)
    k = len(filt.coefficients)
    if k > len(samples):
        raise FilterLongerThanStream(f"{k} taps, {len(samples)} samples")
    _check_homogeneous(samples)

    ts = np.array([m.timestamp for m in samples], dtype=np.int64)
    if len(ts) > 1:
        diffs = np.diff(ts)
        median = float(np.median(diffs))
        if median <= 0 or np.max(np.abs(diffs - median)) > 0.01 * median:
            raise NonUniformSpacing("sample spacing varies by more than 1%")

    b = np.array(filt.coefficients)
    x = np.array([m.value for m in samples])
    ur = np.array([m.u_random for m in samples])
    us = np.array([m.u_systematic for m in samples])

    y = np.convolve(x, b, mode="valid")
    y_ur = np.sqrt(np.convolve(ur * ur, b * b, mode="valid"))
    y_us = np.abs(np.convolve(us, b, mode="valid"))

    proto = samples[0]
    return [
        Measurement(
            value=float(y[i]),
            u_random=float(y_ur[i]),
            u_systematic=float(y_us[i]),
            unit=proto.unit,
            quantity_kind=proto.quantity_kind,
            timestamp=int(ts[i + k - 1]),
            source_id=proto.source_id,
        )
        for i in range(y.size)
    ]


def virtual_sensor_fuse(
    aligned: Sequence[Measurement], *, virtual_id: str = "virtual"
) -> Measurement:
    """Inverse-variance weighted fusion of simultaneous measurements.

    Sources must be distinct, so systematic parts are independent across
    inputs and both uncertainty parts combine by weighted quadrature.
    The output u_c is strictly below the smallest input u_c for n >= 2.
    """
    aligned = list(aligned)
    if not aligned:
        raise ValueError("nothing to fuse")
    first = aligned[0]
    if len(aligned) == 1:
        warnings.warn("virtual_sensor_fuse called with a single input; passed through")
        return first
    for m in aligned[1:]:
        if m.unit != first.unit or m.quantity_kind != first.quantity_kind:
            raise MixedUnits(f"{m.source_id} disagrees with {first.source_id}")
        if m.timestamp != first.timestamp:
            raise ValueError("fusion inputs must share one instant")
    sources = {m.source_id for m in aligned}
    if len(sources) != len(aligned):
        raise ValueError("fusion inputs must come from distinct sources")
    for m in aligned:
        if m.u_c == 0:
            raise ZeroUncertaintyInput(f"{m.source_id} has u_c = 0")

    weights = [1.0 / m.u_c ** 2 for m in aligned]
    total = _fsum(weights)
    value = _fsum(w * m.value for w, m in zip(weights, aligned)) / total
    u_r = math.sqrt(_fsum((w * m.u_random) ** 2 for w, m in zip(weights, aligned))) / total
    u_s = math.sqrt(_fsum((w * m.u_systematic) ** 2 for w, m in zip(weights, aligned))) / total
    return Measurement(
        value=value,
        u_random=u_r,
        u_systematic=u_s,
        unit=first.unit,
        quantity_kind=first.quantity_kind,
        timestamp=first.timestamp,
        source_id=virtual_id,
    )


def label_with_uncertainty(m: Measurement, threshold: float) -> LabeledValue:
    """Label a value against a threshold with the wrong-label probability.

    Assumes a gaussian measurand: p_wrong = Phi(-|value - threshold| / u_c).
    """
    above = m.value >= threshold
    u = m.u_c
    if u == 0:
        p = 0.5 if m.value == threshold else 0.0
    else:
        p = float(ndtr(-abs(m.value - threshold) / u))
    return LabeledValue(
        label=Label.ABOVE if above else Label.BELOW,
        p_wrong=p,
        source=m,
        threshold=threshold,
    )
