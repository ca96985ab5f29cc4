"""Shared helpers for the test suite."""

from metrotwin import Measurement, QuantityKind, units


def mk(
    value,
    u_r=0.1,
    u_s=0.0,
    t=0,
    source="s",
    unit=units.ONE,
    kind=QuantityKind.DIMENSIONLESS,
    u_t=0.0,
):
    """Measurement factory with dimensionless defaults."""
    return Measurement(
        value=value,
        u_random=u_r,
        u_systematic=u_s,
        unit=unit,
        quantity_kind=kind,
        timestamp=t,
        source_id=source,
        u_timestamp=u_t,
    )
