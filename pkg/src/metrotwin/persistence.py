"""Stream persistence: one CSV file per measurement stream.

Documented schema (header row mandatory, UTF-8):

    timestamp_tai_ns, source_id, value, u_random, u_systematic,
    unit, quantity_kind, timestamp_rfc3339

Timestamps are TAI nanoseconds as integers; the trailing RFC 3339
column is a human-readable convenience rendering of the same instant.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

from .timebase import ns_to_rfc3339
from .uncertainty import Measurement
from .units import QuantityKind, parse_unit

STREAM_CSV_HEADER = [
    "timestamp_tai_ns",
    "source_id",
    "value",
    "u_random",
    "u_systematic",
    "unit",
    "quantity_kind",
    "timestamp_rfc3339",
]


def write_stream_csv(path, measurements) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STREAM_CSV_HEADER)
        for m in measurements:
            writer.writerow(
                [
                    m.timestamp,
                    m.source_id,
                    repr(m.value),
                    repr(m.u_random),
                    repr(m.u_systematic),
                    m.unit.symbol,
                    m.quantity_kind.label,
                    ns_to_rfc3339(m.timestamp),
                ]
            )


def read_stream_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != STREAM_CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        out = []
        for row in reader:
            out.append(
                Measurement(
                    value=float(row[2]),
                    u_random=float(row[3]),
                    u_systematic=float(row[4]),
                    unit=parse_unit(row[5]),
                    quantity_kind=QuantityKind.from_label(row[6]),
                    timestamp=int(row[0]),
                    source_id=row[1],
                )
            )
        return out


def validate_stream_csv(path) -> None:
    """Raise ValueError unless the file follows the documented schema."""
    read_stream_csv(path)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def directory_digests(root) -> dict:
    """sha256 of every regular file under root, keyed by relative path."""
    root = Path(root)
    return {
        str(p.relative_to(root)).replace("\\", "/"): file_digest(p)
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }
