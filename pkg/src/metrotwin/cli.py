"""Command-line interface.

Subcommands:
  run <scenario> [--out DIR] [--seed N]   execute a scenario
  validate <scenario>                     check a scenario file
  export-aas <run-dir> <stream-id>        write a submodel document
  report <run-dir>                        per-sensor summary (text + CSV)

Exit codes: 0 success, 1 validation failure, 2 runtime error, 64 usage.
The METRO_TWIN_OUT environment variable overrides the default output
directory for `run`.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import MetroTwinError, ParseError, UnknownStream, ValidationError
from .scenario import load_scenario, run_scenario
from .submodel import export_submodel

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="metrotwin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("scenario", help="path to a scenario TOML file")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")

    p_val = sub.add_parser("validate", help="validate a scenario file")
    p_val.add_argument("scenario")

    p_exp = sub.add_parser("export-aas", help="export a stream submodel")
    p_exp.add_argument("run_dir")
    p_exp.add_argument("stream_id")
    p_exp.add_argument("--out", help="output file (default <run-dir>/submodels/)")

    p_rep = sub.add_parser("report", help="summarize a completed run")
    p_rep.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"metrotwin: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "export-aas":
            return _cmd_export(args)
        if args.command == "report":
            return _cmd_report(args)
    except (ParseError, ValidationError) as exc:
        print(f"metrotwin: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MetroTwinError as exc:
        print(f"metrotwin: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"metrotwin: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = args.out or os.environ.get("METRO_TWIN_OUT") or f"runs/{config.name}"
    result = run_scenario(config, out)
    print(f"run complete: {len(result.event_log)} events, "
          f"{len(result.stream_files)} streams, {len(result.swaps)} swaps")
    print(f"outputs in {result.out_dir}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = load_scenario(args.scenario)
    print(f"{args.scenario}: valid ({len(config.sensors)} sensors, "
          f"{len(config.nodes)} nodes, {len(config.virtual_sensors)} virtual)")
    return EXIT_OK


def _cmd_export(args) -> int:
    doc = export_submodel(args.run_dir, args.stream_id)
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        out_dir = Path(args.run_dir) / "submodels"
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / f"{args.stream_id}.json"
    doc.write_json(out_path)
    print(f"submodel written to {out_path}")
    return EXIT_OK


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise UnknownStream(f"{run_dir} is not a run directory (no manifest.json)")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)

    truth = {}
    truth_path = run_dir / "truth.jsonl"
    if truth_path.exists():
        with open(truth_path, "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                truth[(rec["sensor_id"], rec["sim_time_ns"])] = rec["truth"]

    flags = {}
    swaps = {}
    audit_path = run_dir / "audit.jsonl"
    if audit_path.exists():
        with open(audit_path, "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("kind") == "drift_report" and rec.get("flagged"):
                    flags[rec["sensor_id"]] = flags.get(rec["sensor_id"], 0) + 1
                elif rec.get("kind") == "recalibration":
                    sid = rec["certificate"]["certificate_id"].split("-infield-")[0]
                    swaps[sid] = swaps.get(sid, 0) + 1

    # coverage: fraction of samples whose k=2 interval contains the truth
    from .persistence import read_stream_csv

    rows = []
    for sid in sorted(manifest.get("sensors", {})):
        stream = read_stream_csv(run_dir / manifest["streams"][sid])
        n = 0
        covered = 0
        sensor_truth = {
            t: v for (s, t), v in truth.items() if s == sid
        }
        truth_values = sorted(sensor_truth.items())
        for m in stream:
            if not truth_values:
                break
            # nearest truth record in simulation time
            t_true = min(truth_values, key=lambda kv: abs(kv[0] - m.timestamp))[1]
            n += 1
            if abs(m.value - t_true) <= 2.0 * m.u_c:
                covered += 1
        rows.append(
            {
                "sensor_id": sid,
                "n_samples": n,
                "coverage_k2": round(covered / n, 4) if n else "",
                "flagged_windows": flags.get(sid, 0),
                "swaps": swaps.get(sid, 0),
            }
        )

    report_path = run_dir / "report.csv"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["sensor_id", "n_samples", "coverage_k2",
                        "flagged_windows", "swaps"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)

    fmt = "{:<14} {:>9} {:>12} {:>15} {:>6}"
    print(fmt.format("sensor", "samples", "coverage_k2", "flagged_windows", "swaps"))
    for row in rows:
        print(fmt.format(row["sensor_id"], row["n_samples"],
                         str(row["coverage_k2"]), row["flagged_windows"],
                         row["swaps"]))
    print(f"report written to {report_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
