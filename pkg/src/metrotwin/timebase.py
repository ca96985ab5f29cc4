"""Timestamp helpers: TAI nanoseconds as integers, RFC 3339 for humans.

The simulation timebase is TAI nanoseconds since the epoch; leap-second
bookkeeping is out of scope, so the RFC 3339 rendering is a plain
epoch-based civil timestamp used for readability only.
"""

from __future__ import annotations

from datetime import datetime, timezone

NS_PER_S = 1_000_000_000


def s_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def ns_to_s(ns: int) -> float:
    return ns / NS_PER_S


def rfc3339_to_ns(text: str) -> int:
    # split the fractional seconds off first: fromisoformat only takes
    # up to 6 digits (until 3.11), while we emit 9
    text = text.replace("Z", "+00:00")
    frac_ns = 0
    if "." in text:
        head, rest = text.split(".", 1)
        digits = rest[: len(rest) - len("+00:00")] if "+" in rest or "-" in rest else rest
        tz = rest[len(digits):]
        frac_ns = int(digits.ljust(9, "0")[:9])
        text = head + tz
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * NS_PER_S + frac_ns


def ns_to_rfc3339(ns: int) -> str:
    secs, rem = divmod(int(ns), NS_PER_S)
    stamp = datetime.fromtimestamp(secs, tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%S"
    )
    return f"{stamp}.{rem:09d}Z"
