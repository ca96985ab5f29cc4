"""Scenario configuration and the deterministic discrete-event runner.

A scenario is a TOML document declaring nodes (with clock distortion),
sensors (signal, noise, calibration certificate), virtual-sensor rules,
fault injections and the recalibration policy. `run_scenario` advances
a single global virtual clock over a heap of scheduled events; all
randomness flows from the global seed through per-entity derived seeds,
so the same config and seed produce byte-identical outputs and adding a
sensor does not perturb the draws of the others.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import persistence, redundancy, timesync, twin as twin_mod
from .errors import ParseError, ValidationError
from .redundancy import RecalibrationPolicy, recalibration_workflow
from .timebase import NS_PER_S, rfc3339_to_ns, s_to_ns
from .timesync import ClockEstimate, ClockModel, SyncConfig
from .twin import (
    DRIFT_SUSPECTED,
    REQUEST_RECALIBRATION,
    CalibrationCertificate,
    SensorModel,
    TwinState,
    apply_calibration,
    load_certificate,
    sample_sensor,
    twin_control,
    twin_observe,
)

DEFAULT_START = "2026-01-01T00:00:00Z"


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    reference: bool
    clock: ClockModel


@dataclass(frozen=True)
class SensorConfig:
    sensor_id: str
    node: str
    certificate: CalibrationCertificate
    sample_period_s: float
    noise_sigma: float
    signal: tuple
    plausible_range: tuple = None


@dataclass(frozen=True)
class InjectionConfig:
    sensor: str
    start_s: float
    kind: str  # step_bias | ramp_drift
    magnitude: float


@dataclass(frozen=True)
class VirtualSensorConfig:
    virtual_id: str
    rule: dict


@dataclass(frozen=True)
class SyncSettings:
    interval_s: float = 5.0
    initial_exchanges: int = 8
    path_delay_s: float = 0.001
    path_asymmetry_s: float = 0.0  # injected (fwd - rev)/2 ground truth
    asym_bound_s: float = 0.001
    processing_s: float = 0.0001


@dataclass(frozen=True)
class RecalSettings:
    enabled: bool = False
    window_s: float = 10.0
    policy: RecalibrationPolicy = field(default_factory=RecalibrationPolicy)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration_s: float
    seed: int
    grid_period_s: float
    start_ns: int
    nodes: tuple
    sensors: tuple
    virtual_sensors: tuple
    injections: tuple
    sync: SyncSettings
    recalibration: RecalSettings

    @property
    def reference_node(self) -> str:
        for node in self.nodes:
            if node.reference:
                return node.node_id
        raise ValueError("no reference node")


def _rule_stream_refs(rule):
    if isinstance(rule, str):
        yield rule
        return
    if "input" in rule:
        yield from _rule_stream_refs(rule["input"])
    for sub in rule.get("inputs", ()):
        yield from _rule_stream_refs(sub)


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; collects all validation errors."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc

    problems = []
    meta = doc.get("scenario", {})
    name = meta.get("name", path.stem)
    duration_s = float(meta.get("duration_s", 0.0))
    if duration_s <= 0:
        problems.append("scenario.duration_s must be > 0")
    if "seed" not in meta:
        problems.append("scenario.seed is mandatory")
    seed = int(meta.get("seed", 0))
    grid_period_s = float(meta.get("grid_period_s", 1.0))
    if grid_period_s <= 0:
        problems.append("scenario.grid_period_s must be > 0")
    start_ns = rfc3339_to_ns(meta.get("start_rfc3339", DEFAULT_START))

    nodes = []
    node_ids = set()
    for i, nd in enumerate(doc.get("nodes", [])):
        nid = nd.get("id", f"node{i}")
        if nid in node_ids:
            problems.append(f"nodes[{i}]: duplicate id {nid!r}")
        node_ids.add(nid)
        try:
            clock = ClockModel(
                node_id=nid,
                offset_s=float(nd.get("offset_s", 0.0)),
                skew=float(nd.get("skew", 0.0)),
                jitter_sigma_s=float(nd.get("jitter_sigma_s", 0.0)),
            )
        except ValueError as exc:
            problems.append(f"nodes[{i}] ({nid}): {exc}")
            clock = ClockModel(node_id=nid)
        nodes.append(NodeConfig(nid, bool(nd.get("reference", False)), clock))
    refs = [n for n in nodes if n.reference]
    if not nodes:
        pass  # empty scenario is legal
    elif len(refs) != 1:
        problems.append(f"exactly one reference node required, found {len(refs)}")

    sensors = []
    sensor_ids = set()
    for i, sd in enumerate(doc.get("sensors", [])):
        sid = sd.get("id", f"sensor{i}")
        if sid in sensor_ids:
            problems.append(f"sensors[{i}]: duplicate id {sid!r}")
        sensor_ids.add(sid)
        if sd.get("node") not in node_ids:
            problems.append(
                f"sensors[{i}] ({sid}): unknown node {sd.get('node')!r}"
            )
        cert_spec = sd.get("certificate")
        cert = None
        try:
            if isinstance(cert_spec, str):
                cert = load_certificate((path.parent / cert_spec))
            elif isinstance(cert_spec, dict):
                cert = CalibrationCertificate.from_json_dict(cert_spec)
            else:
                problems.append(f"sensors[{i}] ({sid}): certificate missing")
        except (OSError, KeyError, ValueError) as exc:
            problems.append(f"sensors[{i}] ({sid}): certificate: {exc}")
        if cert is not None:
            rng_range = sd.get("plausible_range")
            sensors.append(
                SensorConfig(
                    sensor_id=sid,
                    node=sd.get("node", ""),
                    certificate=cert,
                    sample_period_s=float(sd.get("sample_period_s", 1.0)),
                    noise_sigma=float(sd.get("noise_sigma", 0.0)),
                    signal=tuple(sd.get("signal", [])),
                    plausible_range=tuple(rng_range) if rng_range else None,
                )
            )

    virtuals = []
    for i, vd in enumerate(doc.get("virtual_sensors", [])):
        vid = vd.get("id", f"virtual{i}")
        rule = vd.get("rule")
        if rule is None:
            problems.append(f"virtual_sensors[{i}] ({vid}): rule missing")
            continue
        for ref in _rule_stream_refs(rule):
            if ref not in sensor_ids:
                problems.append(
                    f"virtual_sensors[{i}] ({vid}): unknown stream ref {ref!r}"
                )
        virtuals.append(VirtualSensorConfig(vid, rule))

    injections = []
    for i, jd in enumerate(doc.get("injections", [])):
        target = jd.get("sensor")
        if target not in sensor_ids:
            problems.append(f"injections[{i}]: unknown sensor {target!r}")
        start_s = float(jd.get("start_s", 0.0))
        if start_s > duration_s:
            problems.append(
                f"injections[{i}]: start_s {start_s} beyond duration {duration_s}"
            )
        kind = jd.get("kind")
        if kind not in ("step_bias", "ramp_drift"):
            problems.append(f"injections[{i}]: unknown kind {kind!r}")
        injections.append(
            InjectionConfig(target, start_s, kind or "step_bias",
                            float(jd.get("magnitude", 0.0)))
        )

    sync_doc = doc.get("sync", {})
    sync = SyncSettings(
        interval_s=float(sync_doc.get("interval_s", 5.0)),
        initial_exchanges=int(sync_doc.get("initial_exchanges", 8)),
        path_delay_s=float(sync_doc.get("path_delay_s", 0.001)),
        path_asymmetry_s=float(sync_doc.get("path_asymmetry_s", 0.0)),
        asym_bound_s=float(sync_doc.get("asym_bound_s", 0.001)),
        processing_s=float(sync_doc.get("processing_s", 0.0001)),
    )

    rec_doc = doc.get("recalibration", {})
    recal = RecalSettings(
        enabled=bool(rec_doc.get("enabled", False)),
        window_s=float(rec_doc.get("window_s", 10.0)),
        policy=RecalibrationPolicy(
            threshold_k=float(rec_doc.get("threshold_k", 2.0)),
            min_window_points=int(rec_doc.get("min_window_points", 10)),
            cooldown_windows=int(rec_doc.get("cooldown_windows", 3)),
            offset_only_fallback=bool(rec_doc.get("offset_only", True)),
            min_pairs=int(rec_doc.get("min_pairs", 30)),
            validity_s=float(rec_doc.get("validity_s", 86_400.0)),
        ),
    )

    if problems:
        raise ValidationError(problems)
    return ScenarioConfig(
        name=name,
        duration_s=duration_s,
        seed=seed,
        grid_period_s=grid_period_s,
        start_ns=start_ns,
        nodes=tuple(nodes),
        sensors=tuple(sensors),
        virtual_sensors=tuple(virtuals),
        injections=tuple(injections),
        sync=sync,
        recalibration=recal,
    )


def derived_seed(global_seed: int, *names) -> int:
    """Stable per-entity seed: the entity name hashed into the global seed."""
    tag = ":".join([str(global_seed), *map(str, names)])
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:16], "little")


def entity_rng(global_seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derived_seed(global_seed, *names)))


@dataclass
class RunResult:
    out_dir: Path
    event_log: list
    stream_files: dict  # stream id -> relative path
    swaps: list
    manifest: dict


# event priorities: sync before samples before window processing
_P_SYNC, _P_SAMPLE, _P_WINDOW = 0, 1, 2


def run_scenario(config: ScenarioConfig, out_dir) -> RunResult:
    """Execute a scenario and persist all output artifacts under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "streams").mkdir(exist_ok=True)

    start = config.start_ns
    end = start + s_to_ns(config.duration_s)
    ref_node = config.reference_node if config.nodes else None

    clocks = {n.node_id: n.clock for n in config.nodes}
    node_rngs = {
        n.node_id: entity_rng(config.seed, "node", n.node_id) for n in config.nodes
    }
    estimates = {}
    histories = {n.node_id: [] for n in config.nodes}
    if ref_node is not None:
        estimates[ref_node] = ClockEstimate.identity(ref_node)
    sync_cfg_by_node = {
        n.node_id: SyncConfig(
            client_jitter_s=n.clock.jitter_sigma_s,
            server_jitter_s=clocks[ref_node].jitter_sigma_s if ref_node else 0.0,
            asym_bound_s=config.sync.asym_bound_s,
        )
        for n in config.nodes
    }

    models = {}
    twins = {}
    sensor_rngs = {}
    streams = {s.sensor_id: [] for s in config.sensors}
    truth_log = []
    for s in config.sensors:
        models[s.sensor_id] = SensorModel(
            sensor_id=s.sensor_id,
            signal=s.signal,
            noise_sigma=s.noise_sigma,
            sample_period_ns=s_to_ns(s.sample_period_s),
            attached_clock=s.node,
        )
        twins[s.sensor_id] = TwinState(
            certificate=s.certificate, plausible_range=s.plausible_range
        )
        sensor_rngs[s.sensor_id] = entity_rng(config.seed, "sensor", s.sensor_id)

    injections = {}
    for inj in config.injections:
        injections.setdefault(inj.sensor, []).append(inj)

    # --- schedule ---
    heap = []
    seq = 0

    def schedule(t_ns, priority, kind, entity):
        nonlocal seq
        heapq.heappush(heap, (t_ns, priority, entity, seq, kind))
        seq += 1

    for node in config.nodes:
        if node.node_id == ref_node:
            continue
        burst_step = s_to_ns(config.sync.interval_s) // max(
            config.sync.initial_exchanges, 1
        )
        for k in range(config.sync.initial_exchanges):
            schedule(start + k * max(burst_step, 1), _P_SYNC, "sync", node.node_id)
        t = start + s_to_ns(config.sync.interval_s)
        while t <= end:
            schedule(t, _P_SYNC, "sync", node.node_id)
            t += s_to_ns(config.sync.interval_s)

    for s in config.sensors:
        period = s_to_ns(s.sample_period_s)
        t = start + period
        while t <= end:
            schedule(t, _P_SAMPLE, "sample", s.sensor_id)
            t += period

    window_ns = s_to_ns(config.recalibration.window_s)
    if config.recalibration.enabled and config.sensors:
        t = start + window_ns
        while t <= end:
            schedule(t, _P_WINDOW, "window", "recalibration")
            t += window_ns

    # --- run ---
    event_log = []
    audit_path = out_dir / "audit.jsonl"
    audit_path.write_text("", encoding="utf-8")
    swaps = []
    cooldowns = {}
    window_index = 0
    grid_ns = s_to_ns(config.grid_period_s)

    def log_event(t_ns, kind, payload):
        event_log.append({"sim_time_ns": t_ns, "event_kind": kind, "payload": payload})

    def raw_bias(sensor_id, t_ns):
        bias = 0.0
        for inj in injections.get(sensor_id, ()):
            t0 = start + s_to_ns(inj.start_s)
            if t_ns >= t0:
                if inj.kind == "step_bias":
                    bias += inj.magnitude
                else:  # ramp_drift
                    bias += inj.magnitude * (t_ns - t0) / NS_PER_S
        return bias

    while heap:
        t_ns, priority, entity, _, kind = heapq.heappop(heap)

        if kind == "sync":
            x = timesync.simulate_exchange(
                clocks[entity],
                clocks[ref_node],
                t_ns,
                config.sync.path_delay_s + config.sync.path_asymmetry_s,
                config.sync.path_delay_s - config.sync.path_asymmetry_s,
                node_rngs[entity],
                processing_s=config.sync.processing_s,
            )
            try:
                est = timesync.estimate_offset(x, sync_cfg_by_node[entity])
            except timesync.NegativeDelay:
                log_event(t_ns, "sync_discarded", {"node": entity})
                continue
            histories[entity].append(est.measurement)
            if len(histories[entity]) >= 2:
                estimates[entity] = timesync.discipline_clock(
                    histories[entity], node_id=entity
                )
            log_event(
                t_ns,
                "sync_exchange",
                {
                    "node": entity,
                    "offset_s": est.measurement.value,
                    "u_offset_s": est.measurement.u_c,
                    "mean_path_delay_s": est.mean_path_delay_s,
                },
            )

        elif kind == "sample":
            model = models[entity]
            cfg = next(s for s in config.sensors if s.sensor_id == entity)
            rng = sensor_rngs[entity]
            if cfg.node not in estimates:
                # node clock not disciplined yet; collection cannot place
                # the sample on the uniform timebase
                log_event(t_ns, "sample_unsynced", {"sensor": entity})
                continue
            raw, local_ts = sample_sensor(
                model, t_ns, rng, clock=clocks.get(cfg.node)
            )
            raw += raw_bias(entity, t_ns)
            enriched_local = apply_calibration(
                raw, twins[entity].certificate, local_ts, source_id=entity
            )
            est = estimates.get(cfg.node, ClockEstimate.identity(cfg.node))
            corrected = timesync.collect([(cfg.node, enriched_local)], {cfg.node: est})[0]
            dropped_before = twins[entity].dropped_samples
            twin_observe(twins[entity], corrected)
            if twins[entity].dropped_samples > dropped_before:
                log_event(t_ns, "sample_dropped", {"sensor": entity})
                continue
            streams[entity].append(corrected)
            cert0 = cfg.certificate
            truth = cert0.gain * model.true_value(t_ns) + cert0.offset
            truth_log.append(
                {"sim_time_ns": t_ns, "sensor_id": entity, "truth": truth}
            )
            log_event(
                t_ns,
                "sample",
                {
                    "sensor": entity,
                    "raw": raw,
                    "value": corrected.value,
                    "u_random": corrected.u_random,
                    "u_systematic": corrected.u_systematic,
                    "timestamp_ns": corrected.timestamp,
                },
            )

        elif kind == "window":
            window_index += 1
            result = _process_window(
                config, t_ns - window_ns, t_ns, streams, twins, cooldowns,
                grid_ns, audit_path, start,
            )
            for ev in result:
                if ev.get("swapped"):
                    swaps.append(ev)
                log_event(t_ns, "window_evaluation", ev)

    # --- virtual sensors over the full run ---
    virtual_streams = {}
    if config.virtual_sensors and all(streams.get(s.sensor_id) for s in config.sensors):
        try:
            aligned = timesync.align_streams(
                {sid: st for sid, st in streams.items()},
                grid_ns,
                grid_origin_ns=start,
            )
            for v in config.virtual_sensors:
                virtual_streams[v.virtual_id] = timesync.run_virtual_sensor_rule(
                    v.rule, aligned, v.virtual_id
                )
                log_event(
                    end, "virtual_stream",
                    {"id": v.virtual_id, "n": len(virtual_streams[v.virtual_id])},
                )
        except (timesync.EmptyStream, timesync.GridOutsideStream):
            pass

    # --- persist ---
    stream_files = {}
    for sid in sorted(streams):
        rel = f"streams/{sid}.csv"
        persistence.write_stream_csv(out_dir / rel, streams[sid])
        stream_files[sid] = rel
    for vid in sorted(virtual_streams):
        rel = f"streams/{vid}.csv"
        persistence.write_stream_csv(out_dir / rel, virtual_streams[vid])
        stream_files[vid] = rel

    with open(out_dir / "events.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for ev in event_log:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
    with open(out_dir / "truth.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in truth_log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    event_digest = hashlib.sha256(
        "".join(json.dumps(ev, sort_keys=True) for ev in event_log).encode()
    ).hexdigest()
    manifest = {
        "schema_version": 1,
        "scenario": config.name,
        "seed": config.seed,
        "duration_s": config.duration_s,
        "grid_period_s": config.grid_period_s,
        "start_ns": start,
        "streams": stream_files,
        "virtual_streams": {
            v.virtual_id: {"rule": v.rule} for v in config.virtual_sensors
        },
        "sensors": {
            s.sensor_id: {
                "node": s.node,
                "initial_certificate": s.certificate.to_json_dict(),
                "final_certificate": twins[s.sensor_id].certificate.to_json_dict(),
                "dropped_samples": twins[s.sensor_id].dropped_samples,
                "flags": sorted(twins[s.sensor_id].flags),
            }
            for s in config.sensors
        },
        "n_events": len(event_log),
        "n_swaps": len(swaps),
        "event_digest": event_digest,
        "stream_digests": {
            rel: persistence.file_digest(out_dir / rel)
            for rel in sorted(stream_files.values())
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")

    return RunResult(out_dir, event_log, stream_files, swaps, manifest)


def _process_window(
    config, w_from, w_to, streams, twins, cooldowns, grid_ns, audit_path, start
):
    """Align one closed window, score drift, recalibrate and swap."""
    # redundancy only makes sense among sensors of one quantity
    groups = {}
    for sid, stream in streams.items():
        window = [m for m in stream if w_from <= m.timestamp <= w_to]
        if len(window) < 2:
            continue
        key = (window[0].unit.symbol, window[0].quantity_kind.label)
        groups.setdefault(key, {})[sid] = window

    out = []
    for key in sorted(groups):
        windowed = groups[key]
        if len(windowed) < 3:
            continue
        try:
            aligned = timesync.align_streams(windowed, grid_ns, grid_origin_ns=start)
        except (timesync.EmptyStream, timesync.GridOutsideStream):
            continue
        out.extend(
            _score_group(config, aligned, twins, cooldowns, w_from, w_to, audit_path)
        )
    return out


def _score_group(config, aligned, twins, cooldowns, w_from, w_to, audit_path):

    # invert the current calibration to recover aligned raw readings
    raw_aligned = {}
    for sid, stream in aligned.items():
        cert = twins[sid].certificate
        raw_aligned[sid] = [(m.value - cert.offset) / cert.gain for m in stream]

    certs = {sid: twins[sid].certificate for sid in aligned}
    events = recalibration_workflow(
        aligned,
        raw_aligned,
        certs,
        config.recalibration.policy,
        now_ns=w_to,
        cooldown_state=cooldowns,
    )

    out = []
    for ev in events:
        record = {"window_from_ns": w_from, "window_to_ns": w_to}
        if ev.report is not None:
            record.update(ev.report.to_json_dict())
            redundancy.append_audit(audit_path, ev.report.to_json_dict())
        if ev.error:
            record["error"] = ev.error
        if ev.swapped and ev.recalibration is not None:
            sid = ev.report.sensor_id
            state = twins[sid]
            state.flags.add(DRIFT_SUSPECTED)
            actions = twin_control(state)
            if REQUEST_RECALIBRATION in actions:
                state.certificate = ev.recalibration.new_certificate
                state.flags.discard(DRIFT_SUSPECTED)
                record["swapped"] = True
                record["new_certificate_id"] = (
                    ev.recalibration.new_certificate.certificate_id
                )
                redundancy.append_audit(audit_path, ev.recalibration.to_json_dict())
        out.append(record)
    return out
