import math
from fractions import Fraction

import pytest

from metrotwin import QuantityKind, check_dimensions, parse_unit, units


def test_meter_per_second_equals_product_form():
    assert check_dimensions(units.METER_PER_SECOND, units.METER / units.SECOND)


def test_kelvin_vs_pascal_differ():
    assert not check_dimensions(units.KELVIN, units.PASCAL)


def test_dimensionless_vs_dimensionless():
    assert check_dimensions(units.ONE, units.ONE)


def test_pascal_decomposes_into_base_units():
    derived = units.KILOGRAM / (units.METER * units.SECOND ** 2)
    assert check_dimensions(units.PASCAL, derived)


def test_bar_converts_to_pascal_exactly():
    assert units.BAR.conversion_factor(units.PASCAL) == 100000.0
    assert units.BAR.scale == Fraction(100000)


def test_conversion_rejects_different_dimensions():
    with pytest.raises(Exception):
        units.KELVIN.conversion_factor(units.PASCAL)


def test_parse_unit_roundtrips_registry_symbols():
    for symbol in ("K", "Pa", "W", "V", "ohm", "Hz", "m/s", "s", "1", "bar", "ns"):
        unit = parse_unit(symbol)
        assert unit.symbol == symbol


def test_parse_unit_unknown_symbol():
    with pytest.raises(KeyError):
        parse_unit("furlong")


def test_unit_algebra_power_matches_repeated_multiplication():
    assert (units.METER ** 3).exponents == (units.METER * units.METER * units.METER).exponents


def test_division_cancels_dimensions():
    assert (units.WATT / units.WATT).dimensionless


def test_quantity_kind_matches_unit():
    assert QuantityKind.PRESSURE.matches(units.PASCAL)
    assert QuantityKind.PRESSURE.matches(units.BAR)
    assert not QuantityKind.PRESSURE.matches(units.KELVIN)
    assert QuantityKind.OTHER.matches(units.KELVIN)  # no canonical dimension


def test_quantity_kind_from_label():
    assert QuantityKind.from_label("temperature") is QuantityKind.TEMPERATURE
    with pytest.raises(Exception):
        QuantityKind.from_label("no-such-kind")


def test_hertz_is_inverse_second():
    assert check_dimensions(units.HERTZ, units.ONE / units.SECOND)


def test_millisecond_to_second_scale():
    assert math.isclose(units.MILLISECOND.conversion_factor(units.SECOND), 1e-3)
