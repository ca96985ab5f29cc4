"""SI units as dimension exponent vectors with exact rational scales.

Only coherent-scalable units are supported: a unit is a 7-vector of
exponents over the SI base dimensions (m, kg, s, A, K, mol, cd) plus a
positive rational factor to the coherent SI unit of that dimension.
Affine-offset units (degree Celsius) are deliberately not representable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

BASE_DIMENSIONS = ("m", "kg", "s", "A", "K", "mol", "cd")

_DIMENSIONLESS = (0, 0, 0, 0, 0, 0, 0)


@dataclass(frozen=True)
class Unit:
    exponents: tuple[int, int, int, int, int, int, int]
    scale: Fraction = Fraction(1)
    symbol: str = ""

    def __post_init__(self):
        if len(self.exponents) != 7:
            raise ValueError("exponents must have length 7")
        if self.scale <= 0:
            raise ValueError("unit scale must be positive")
        object.__setattr__(self, "exponents", tuple(int(e) for e in self.exponents))
        object.__setattr__(self, "scale", Fraction(self.scale))

    @property
    def dimensionless(self) -> bool:
        return self.exponents == _DIMENSIONLESS

    def same_dimension(self, other: "Unit") -> bool:
        return self.exponents == other.exponents

    def __mul__(self, other: "Unit") -> "Unit":
        exps = tuple(a + b for a, b in zip(self.exponents, other.exponents))
        return Unit(exps, self.scale * other.scale)

    def __truediv__(self, other: "Unit") -> "Unit":
        exps = tuple(a - b for a, b in zip(self.exponents, other.exponents))
        return Unit(exps, self.scale / other.scale)

    def __pow__(self, n: int) -> "Unit":
        return Unit(tuple(a * n for a in self.exponents), self.scale ** n)

    def conversion_factor(self, target: "Unit") -> float:
        """Multiplier taking a value in this unit to `target`."""
        if not self.same_dimension(target):
            from .errors import DimensionMismatch
            raise DimensionMismatch(
                f"cannot convert {self.symbol or self.exponents} "
                f"to {target.symbol or target.exponents}"
            )
        return float(self.scale / target.scale)

    def __str__(self):
        return self.symbol or f"Unit{self.exponents}x{self.scale}"


def check_dimensions(a: Unit, b: Unit) -> bool:
    """True iff the two units share the same dimension exponent vector."""
    return a.exponents == b.exponents


def _u(m=0, kg=0, s=0, A=0, K=0, mol=0, cd=0, scale=1, symbol="") -> Unit:
    return Unit((m, kg, s, A, K, mol, cd), Fraction(scale), symbol)


ONE = _u(symbol="1")
METER = _u(m=1, symbol="m")
KILOGRAM = _u(kg=1, symbol="kg")
SECOND = _u(s=1, symbol="s")
AMPERE = _u(A=1, symbol="A")
KELVIN = _u(K=1, symbol="K")
MOLE = _u(mol=1, symbol="mol")
CANDELA = _u(cd=1, symbol="cd")

PASCAL = _u(m=-1, kg=1, s=-2, symbol="Pa")
BAR = _u(m=-1, kg=1, s=-2, scale=100_000, symbol="bar")
WATT = _u(m=2, kg=1, s=-3, symbol="W")
VOLT = _u(m=2, kg=1, s=-3, A=-1, symbol="V")
OHM = _u(m=2, kg=1, s=-3, A=-2, symbol="ohm")
HERTZ = _u(s=-1, symbol="Hz")
METER_PER_SECOND = _u(m=1, s=-1, symbol="m/s")
CUBIC_METER_PER_SECOND = _u(m=3, s=-1, symbol="m3/s")
MILLISECOND = _u(s=1, scale=Fraction(1, 1000), symbol="ms")
NANOSECOND = _u(s=1, scale=Fraction(1, 1_000_000_000), symbol="ns")

_REGISTRY = {
    u.symbol: u
    for u in (
        ONE, METER, KILOGRAM, SECOND, AMPERE, KELVIN, MOLE, CANDELA,
        PASCAL, BAR, WATT, VOLT, OHM, HERTZ, METER_PER_SECOND,
        CUBIC_METER_PER_SECOND, MILLISECOND, NANOSECOND,
    )
}


def parse_unit(symbol: str) -> Unit:
    """Look a unit up by symbol (the set used in configs and CSV files)."""
    try:
        return _REGISTRY[symbol]
    except KeyError:
        raise KeyError(f"unknown unit symbol {symbol!r}; known: {sorted(_REGISTRY)}")


class QuantityKind(Enum):
    """Enumerated quantity labels with their canonical SI dimension."""

    TEMPERATURE = ("temperature", KELVIN.exponents)
    PRESSURE = ("pressure", PASCAL.exponents)
    FLOW = ("flow", CUBIC_METER_PER_SECOND.exponents)
    POWER = ("power", WATT.exponents)
    VOLTAGE = ("voltage", VOLT.exponents)
    CURRENT = ("current", AMPERE.exponents)
    RESISTANCE = ("resistance", OHM.exponents)
    LENGTH = ("length", METER.exponents)
    TIME = ("time", SECOND.exponents)
    FREQUENCY = ("frequency", HERTZ.exponents)
    SPEED = ("speed", METER_PER_SECOND.exponents)
    DIMENSIONLESS = ("dimensionless", _DIMENSIONLESS)
    # generic label for derived quantities with no canonical dimension check
    OTHER = ("other", None)

    def __init__(self, label, dimension):
        self.label = label
        self.dimension = dimension

    def matches(self, unit: Unit) -> bool:
        return self.dimension is None or self.dimension == unit.exponents

    @classmethod
    def from_label(cls, label: str) -> "QuantityKind":
        for kind in cls:
            if kind.label == label:
                return kind
        raise KeyError(f"unknown quantity kind {label!r}")
