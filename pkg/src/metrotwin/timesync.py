"""Collection service: clock models, two-way sync, stream alignment.

Each simulated node owns a `ClockModel` that distorts true time with an
offset, a skew and timestamping jitter. Nodes synchronize to a
reference node with the classic two-way delay-request exchange
(offset = ((t2 - t1) - (t4 - t3)) / 2); a weighted straight-line fit
over the offset history disciplines each clock, and `collect` maps
local timestamps onto the uniform reference timebase with a per-sample
timestamp uncertainty. `align_streams` interpolates corrected streams
onto a common grid so fusion sees simultaneous values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateFit,
    DimensionMismatch,
    EmptyStream,
    GridOutsideStream,
    MixedUnits,
    NegativeDelay,
    UnknownNode,
    UnknownStreamRef,
)
from .timebase import NS_PER_S, ns_to_s, s_to_ns
from .uncertainty import Measurement
from .units import ONE, SECOND, QuantityKind
from . import fusion


@dataclass(frozen=True)
class ClockModel:
    """Node-local clock distortion: local = true*(1+skew) + offset + jitter."""

    node_id: str
    offset_s: float = 0.0
    skew: float = 0.0
    jitter_sigma_s: float = 0.0

    def __post_init__(self):
        if self.jitter_sigma_s < 0:
            raise ValueError("jitter sigma must be >= 0")
        if abs(self.skew) >= 1e-3:
            raise ValueError("skew magnitude must be < 1e-3")


def local_time(clock: ClockModel, true_ns: int, rng) -> int:
    """Timestamp `true_ns` as the node's clock would, in nanoseconds."""
    rng = _as_generator(rng)
    t = ns_to_s(true_ns)
    local = t * (1.0 + clock.skew) + clock.offset_s
    if clock.jitter_sigma_s > 0:
        local += rng.normal(0.0, clock.jitter_sigma_s)
    return s_to_ns(local)


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(key=int(rng)))


@dataclass(frozen=True)
class SyncExchange:
    """One two-way exchange. t1..t4 are ns in the respective local clocks.

    The true path delays are simulation ground truth carried for
    analysis; the estimator must not read them.
    """

    t1: int  # request send, client clock
    t2: int  # request receive, server clock
    t3: int  # reply send, server clock
    t4: int  # reply receive, client clock
    path_delay_fwd_s: float = 0.0
    path_delay_rev_s: float = 0.0


@dataclass(frozen=True)
class SyncConfig:
    """Uncertainty model the estimator is allowed to know."""

    client_jitter_s: float = 0.0
    server_jitter_s: float = 0.0
    # bound on the offset error caused by path asymmetry (half the
    # fwd/rev delay difference), modeled as uniform within +/- bound
    asym_bound_s: float = 0.0


def simulate_exchange(
    client: ClockModel,
    server: ClockModel,
    true_send_ns: int,
    delay_fwd_s: float,
    delay_rev_s: float,
    rng,
    processing_s: float = 0.0,
) -> SyncExchange:
    rng = _as_generator(rng)
    t_req = true_send_ns
    t_rx = t_req + s_to_ns(delay_fwd_s)
    t_tx = t_rx + s_to_ns(processing_s)
    t_rep = t_tx + s_to_ns(delay_rev_s)
    return SyncExchange(
        t1=local_time(client, t_req, rng),
        t2=local_time(server, t_rx, rng),
        t3=local_time(server, t_tx, rng),
        t4=local_time(client, t_rep, rng),
        path_delay_fwd_s=delay_fwd_s,
        path_delay_rev_s=delay_rev_s,
    )


@dataclass(frozen=True)
class OffsetEstimate:
    """Two-way offset estimate and the mean path delay it implies."""

    measurement: Measurement  # offset of client clock vs server, seconds
    mean_path_delay_s: float


def estimate_offset(x: SyncExchange, config: SyncConfig = SyncConfig()) -> OffsetEstimate:
    """Classic two-way estimate: theta = ((t2-t1) - (t4-t3)) / 2.

    Theta is the offset of the server clock relative to the client, that
    is the correction to add to client timestamps. Under asymmetric path
    delays it is biased by half the delay asymmetry. Jitter enters
    through two timestampings per direction; the unknown asymmetry
    contributes asym_bound/sqrt(3) as a systematic part.
    """
    fwd = ns_to_s(x.t2 - x.t1)
    rev = ns_to_s(x.t4 - x.t3)
    theta = (fwd - rev) / 2.0
    delta = (fwd + rev) / 2.0
    if delta < 0:
        raise NegativeDelay(f"mean path delay {delta} s")
    u_jitter = math.sqrt(
        (config.client_jitter_s ** 2 + config.server_jitter_s ** 2) / 2.0
    )
    u_asym = config.asym_bound_s / math.sqrt(3.0)
    return OffsetEstimate(
        measurement=Measurement(
            value=theta,
            u_random=u_jitter,
            u_systematic=u_asym,
            unit=SECOND,
            quantity_kind=QuantityKind.TIME,
            timestamp=x.t4,
            source_id="two_way_sync",
        ),
        mean_path_delay_s=delta,
    )


@dataclass(frozen=True)
class ClockEstimate:
    """Disciplined clock: offset(t) = offset_at_ref + skew * (t - t_ref).

    `offset_at(t)` is the correction (reference minus local, seconds) to
    add to a local timestamp to land on the reference timebase, as
    estimated by the two-way exchanges.
    """

    node_id: str
    t_ref_ns: int
    offset_at_ref_s: float
    skew: float
    covariance: tuple  # 2x2 for (offset_at_ref, skew)

    @property
    def u_offset_s(self) -> float:
        return math.sqrt(max(self.covariance[0][0], 0.0))

    @property
    def u_skew(self) -> float:
        return math.sqrt(max(self.covariance[1][1], 0.0))

    def offset_at(self, local_ns: int) -> float:
        dt = ns_to_s(local_ns - self.t_ref_ns)
        return self.offset_at_ref_s + self.skew * dt

    def offset_uncertainty_at(self, local_ns: int) -> float:
        dt = ns_to_s(local_ns - self.t_ref_ns)
        c = self.covariance
        var = c[0][0] + 2.0 * dt * c[0][1] + dt * dt * c[1][1]
        return math.sqrt(max(var, 0.0))

    def to_reference(self, local_ns: int) -> int:
        """Map a local timestamp onto the reference timebase."""
        return local_ns + s_to_ns(self.offset_at(local_ns))

    @classmethod
    def identity(cls, node_id: str) -> "ClockEstimate":
        return cls(node_id, 0, 0.0, 0.0, ((0.0, 0.0), (0.0, 0.0)))


def discipline_clock(history, node_id: str = "node") -> ClockEstimate:
    """Weighted least-squares line through (time, offset) estimates.

    Timestamps are centered on their mean before fitting, which makes
    the fit invariant under shifting all timestamps by a constant.
    """
    history = list(history)
    if len(history) < 2:
        raise DegenerateFit("need at least 2 offset estimates")
    t = np.array([m.timestamp for m in history], dtype=float)
    y = np.array([m.value for m in history])
    u = np.array([m.u_c for m in history])
    if np.ptp(t) == 0:
        raise DegenerateFit("all offset estimates share one timestamp")

    t_ref = float(np.mean(t))
    tc = (t - t_ref) / NS_PER_S
    w = 1.0 / (u * u) if np.all(u > 0) else np.ones_like(u)

    a = np.column_stack([np.ones_like(tc), tc])
    normal = a.T @ (w[:, None] * a)
    cov = np.linalg.inv(normal)
    params = cov @ (a.T @ (w * y))
    return ClockEstimate(
        node_id=node_id,
        t_ref_ns=int(round(t_ref)),
        offset_at_ref_s=float(params[0]),
        skew=float(params[1]),
        covariance=tuple(map(tuple, cov.tolist())),
    )


def collect(samples, estimates: dict) -> list[Measurement]:
    """Map locally timestamped samples onto the uniform reference base.

    `samples` is an iterable of (node_id, Measurement) where the
    measurement's timestamp is node-local. The corrected measurement
    carries the residual sync uncertainty as `u_timestamp`.
    """
    out = []
    for node_id, m in samples:
        if node_id not in estimates:
            raise UnknownNode(node_id)
        est = estimates[node_id]
        corrected = est.to_reference(m.timestamp)
        out.append(
            Measurement(
                value=m.value,
                u_random=m.u_random,
                u_systematic=m.u_systematic,
                unit=m.unit,
                quantity_kind=m.quantity_kind,
                timestamp=corrected,
                source_id=m.source_id,
                u_timestamp=est.offset_uncertainty_at(m.timestamp),
            )
        )
    return out


def align_streams(
    streams: dict,
    grid_period_ns: int,
    *,
    grid_origin_ns: int = 0,
) -> dict:
    """Linearly interpolate every stream onto one shared uniform grid.

    The grid holds multiples of the period (from `grid_origin_ns`) that
    lie inside every stream's time span; there is no extrapolation. The
    interpolated u_random picks up a slope-based term |dv/dt| * u_t for
    timestamp uncertainty, which vanishes for constant signals. Grid
    points that coincide with a sample return that sample unchanged.
    """
    if grid_period_ns <= 0:
        raise ValueError("grid period must be positive")
    for name, stream in streams.items():
        if not stream:
            raise EmptyStream(name)

    lo = max(s[0].timestamp for s in streams.values())
    hi = min(s[-1].timestamp for s in streams.values())
    first = grid_origin_ns + math.ceil((lo - grid_origin_ns) / grid_period_ns) * grid_period_ns
    if first > hi:
        raise GridOutsideStream(f"no grid point inside common span [{lo}, {hi}]")
    grid = np.arange(first, hi + 1, grid_period_ns, dtype=np.int64)

    aligned = {}
    for name, stream in streams.items():
        ts = np.array([m.timestamp for m in stream], dtype=np.int64)
        if np.any(np.diff(ts) <= 0):
            raise ValueError(f"stream {name} is not strictly time-ordered")
        proto = stream[0]
        out = []
        idx = np.searchsorted(ts, grid, side="left")
        for g, i in zip(grid, idx):
            if i < len(ts) and ts[i] == g:
                m = stream[i]
                out.append(
                    Measurement(
                        value=m.value, u_random=m.u_random,
                        u_systematic=m.u_systematic, unit=m.unit,
                        quantity_kind=m.quantity_kind, timestamp=int(g),
                        source_id=m.source_id,
                    )
                )
                continue
            a, b = stream[i - 1], stream[i]
            span = b.timestamp - a.timestamp
            f = (g - a.timestamp) / span
            slope = (b.value - a.value) / ns_to_s(span)
            u_t = (1 - f) * a.u_timestamp + f * b.u_timestamp
            u_interp = abs(slope) * u_t
            u_r = math.sqrt(
                ((1 - f) * a.u_random) ** 2
                + (f * b.u_random) ** 2
                + u_interp ** 2
            )
            out.append(
                Measurement(
                    value=(1 - f) * a.value + f * b.value,
                    u_random=u_r,
                    u_systematic=(1 - f) * a.u_systematic + f * b.u_systematic,
                    unit=proto.unit,
                    quantity_kind=proto.quantity_kind,
                    timestamp=int(g),
                    source_id=proto.source_id,
                )
            )
        aligned[name] = out
    return aligned


def run_virtual_sensor_rule(rule, streams: dict, virtual_id: str) -> list:
    """Evaluate a declared fusion rule over aligned streams.

    Rules compose the four fusion operators:
      {"op": "fuse", "inputs": [<rule-or-name>, ...]}
      {"op": "fir", "coefficients": [...], "input": <rule-or-name>}
      {"op": "window_average", "window_s": <float>, "input": <rule-or-name>}
      {"op": "label", "threshold": <float>, "input": <rule-or-name>}
    A bare string is a stream reference. The label operator emits a 0/1
    indicator stream with its Bernoulli standard uncertainty, so every
    rule output looks like an ordinary measurement stream downstream.
    """
    out = [m.with_source(virtual_id) for m in _eval_rule(rule, streams, virtual_id)]
    return out


def _eval_rule(rule, streams, virtual_id):
    if isinstance(rule, str):
        if rule not in streams:
            raise UnknownStreamRef(rule)
        return list(streams[rule])
    op = rule.get("op")
    if op == "fuse":
        inputs = [_eval_rule(r, streams, virtual_id) for r in rule["inputs"]]
        units = {s[0].unit for s in inputs if s}
        if len(units) > 1:
            raise DimensionMismatch("fuse inputs disagree on unit")
        by_ts = {}
        for stream in inputs:
            for m in stream:
                by_ts.setdefault(m.timestamp, []).append(m)
        fused = []
        for ts in sorted(by_ts):
            group = by_ts[ts]
            if len(group) == len(inputs):
                fused.append(fusion.virtual_sensor_fuse(group, virtual_id=virtual_id))
        return fused
    if op == "fir":
        stream = _normalize_source(_eval_rule(rule["input"], streams, virtual_id))
        return fusion.fir_low_pass(stream, fusion.FirFilter(tuple(rule["coefficients"])))
    if op == "window_average":
        stream = _normalize_source(_eval_rule(rule["input"], streams, virtual_id))
        window = s_to_ns(rule["window_s"])
        return list(fusion.window_average(stream, window).measurements)
    if op == "label":
        stream = _eval_rule(rule["input"], streams, virtual_id)
        out = []
        for m in stream:
            lab = fusion.label_with_uncertainty(m, rule["threshold"])
            p = lab.p_wrong
            out.append(
                Measurement(
                    value=1.0 if lab.label is fusion.Label.ABOVE else 0.0,
                    u_random=math.sqrt(p * (1.0 - p)),
                    u_systematic=0.0,
                    unit=ONE,
                    quantity_kind=QuantityKind.DIMENSIONLESS,
                    timestamp=m.timestamp,
                    source_id=virtual_id,
                )
            )
        return out
    raise ValueError(f"unknown rule op {op!r}")


def _normalize_source(stream):
    # stream operators require one source id; rule outputs may mix them
    if not stream:
        return stream
    sid = stream[0].source_id
    return [m.with_source(sid) for m in stream]
