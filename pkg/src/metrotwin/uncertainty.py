"""Uncertain quantities: first-order propagation and a Monte Carlo oracle.

A `Measurement` keeps its standard uncertainty split into a random part
(uncorrelated sample to sample) and a systematic part (fully correlated
for samples from the same source); the combined uncertainty u_c is the
quadrature of the two. `combine_linear` implements the first-order law
of propagation of uncertainty for linear models including input
correlations; `monte_carlo_propagate` is the numerical cross-check for
arbitrary (vectorized) models.

All functions here are pure and safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    DimensionMismatch,
    LengthMismatch,
    ModelEvaluationFailure,
    NonPSDCorrelation,
    NonPSDCovariance,
)
from .units import ONE, QuantityKind, Unit

# floating-point slack allowed on quadratic forms of PSD matrices
PSD_SLACK = 1e-12


@dataclass(frozen=True)
class Measurement:
    """One uncertainty-enriched sample.

    `timestamp` is TAI nanoseconds. `u_timestamp` is the standard
    uncertainty of the timestamp in seconds (attached by the collector
    after clock correction; zero for perfectly known time).
    """

    value: float
    u_random: float
    u_systematic: float
    unit: Unit
    quantity_kind: QuantityKind
    timestamp: int
    source_id: str
    u_timestamp: float = 0.0

    def __post_init__(self):
        if self.u_random < 0 or self.u_systematic < 0:
            raise ValueError("standard uncertainties must be >= 0")
        if self.u_timestamp < 0:
            raise ValueError("timestamp uncertainty must be >= 0")
        if not self.quantity_kind.matches(self.unit):
            raise DimensionMismatch(
                f"quantity kind {self.quantity_kind.label!r} does not match "
                f"unit {self.unit}"
            )

    @property
    def u_c(self) -> float:
        """Combined standard uncertainty, quadrature of both parts."""
        return math.hypot(self.u_random, self.u_systematic)

    def with_source(self, source_id: str) -> "Measurement":
        return replace(self, source_id=source_id)


@dataclass(frozen=True)
class UncertainVector:
    """Correlated input vector for linear propagation.

    `systematic` marks inputs whose uncertainty is fully correlated
    across repeated samples from the same source; their contribution to
    a combined result is reported as u_systematic.
    """

    values: tuple
    covariance: tuple
    units: tuple
    systematic: tuple = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        n = v.size
        if cov.shape != (n, n):
            raise LengthMismatch(f"covariance shape {cov.shape} != ({n}, {n})")
        if len(self.units) != n:
            raise LengthMismatch("units length does not match values")
        scale = np.max(np.abs(cov)) or 1.0
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance not symmetric within 1e-12")
        if np.any(np.diag(cov) < 0):
            raise ValueError("covariance diagonal must be >= 0")
        sd = np.sqrt(np.diag(cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = cov / np.outer(sd, sd)
        off = corr[~np.isnan(corr)]
        if off.size and (np.min(off) < -1 - 1e-9 or np.max(off) > 1 + 1e-9):
            raise ValueError("implied correlations outside [-1, 1]")
        sys_flags = self.systematic
        if sys_flags is None:
            sys_flags = (False,) * n
        if len(sys_flags) != n:
            raise LengthMismatch("systematic flags length does not match values")
        object.__setattr__(self, "values", tuple(float(x) for x in v))
        object.__setattr__(self, "covariance", tuple(map(tuple, cov.tolist())))
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "systematic", tuple(bool(b) for b in sys_flags))

    def __len__(self):
        return len(self.values)

    @classmethod
    def independent(cls, values, uncertainties, units, systematic=None):
        u = np.asarray(uncertainties, dtype=float)
        return cls(tuple(values), tuple(map(tuple, np.diag(u * u).tolist())),
                   tuple(units), systematic)


@dataclass(frozen=True)
class DistributionSpec:
    """Input distribution for the Monte Carlo oracle."""

    kind: str  # gaussian | uniform | triangular
    mean: float = 0.0
    sigma: float = 0.0
    lower: float = 0.0
    upper: float = 0.0
    mode: float = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.sigma <= 0:
                raise ValueError("gaussian sigma must be > 0")
        elif self.kind in ("uniform", "triangular"):
            if not self.lower < self.upper:
                raise ValueError(f"{self.kind} requires lower < upper")
            if self.kind == "triangular" and self.mode is None:
                object.__setattr__(self, "mode", 0.5 * (self.lower + self.upper))
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, sigma):
        return cls("gaussian", mean=mean, sigma=sigma)

    @classmethod
    def uniform(cls, lower, upper):
        return cls("uniform", lower=lower, upper=upper)

    @classmethod
    def triangular(cls, lower, upper, mode=None):
        return cls("triangular", lower=lower, upper=upper, mode=mode)

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard-normal copula draws to this distribution."""
        if self.kind == "gaussian":
            return self.mean + self.sigma * z
        p = ndtr(z)
        a, b = self.lower, self.upper
        if self.kind == "uniform":
            return a + p * (b - a)
        c = (self.mode - a) / (b - a)
        left = a + np.sqrt(np.clip(p * c, 0, None)) * (b - a)
        right = b - np.sqrt(np.clip((1 - p) * (1 - c), 0, None)) * (b - a)
        return np.where(p < c, left, right)


def _fsum(values) -> float:
    # exact (correctly rounded) summation: permutation invariant by design
    return math.fsum(values)


def combine_linear(
    sensitivities: Sequence[float],
    inputs: UncertainVector,
    output_unit: Unit,
    *,
    quantity_kind: QuantityKind = None,
    timestamp: int = 0,
    source_id: str = "combined",
) -> Measurement:
    """Propagate a linear model y = sum(c_i * x_i) per the first-order law.

    u_c(y)^2 = c . Cov . c^T, covering correlated inputs. Inputs must be
    dimensionally compatible with `output_unit` (values in other scales
    of the same dimension are converted); dimensionless inputs are
    accepted as-is, their sensitivity carrying the conversion.
    """
    c = np.asarray(sensitivities, dtype=float)
    n = len(inputs)
    if c.size != n:
        raise LengthMismatch(f"{c.size} sensitivities for {n} inputs")

    factors = np.ones(n)
    for i, unit in enumerate(inputs.units):
        if unit.same_dimension(output_unit):
            factors[i] = unit.conversion_factor(output_unit)
        elif unit.dimensionless:
            factors[i] = float(unit.scale)
        else:
            raise DimensionMismatch(
                f"input {i} unit {unit} incompatible with output {output_unit}"
            )

    x = np.asarray(inputs.values) * factors
    cov = np.asarray(inputs.covariance) * np.outer(factors, factors)

    value = _fsum(c * x)

    q_total = float(c @ cov @ c)
    q_scale = float(np.abs(c) @ np.abs(cov) @ np.abs(c))
    if q_total < -PSD_SLACK * max(1.0, q_scale):
        raise NonPSDCovariance(f"quadratic form {q_total} negative beyond tolerance")
    q_total = max(q_total, 0.0)

    sys_idx = np.array(inputs.systematic, dtype=bool)
    if sys_idx.any():
        cs = c[sys_idx]
        q_sys = float(cs @ cov[np.ix_(sys_idx, sys_idx)] @ cs)
        q_sys = min(max(q_sys, 0.0), q_total)
    else:
        q_sys = 0.0

    if quantity_kind is None:
        quantity_kind = _kind_for(output_unit)
    return Measurement(
        value=value,
        u_random=math.sqrt(q_total - q_sys),
        u_systematic=math.sqrt(q_sys),
        unit=output_unit,
        quantity_kind=quantity_kind,
        timestamp=timestamp,
        source_id=source_id,
    )


def _kind_for(unit: Unit) -> QuantityKind:
    for kind in QuantityKind:
        if kind.dimension == unit.exponents:
            return kind
    return QuantityKind.OTHER


@dataclass(frozen=True)
class MonteCarloResult:
    measurement: Measurement
    interval: tuple  # shortest coverage interval at `coverage`
    coverage: float = 0.95
    n_draws: int = 0


def monte_carlo_propagate(
    model: Callable,
    inputs: Sequence[DistributionSpec],
    n_draws: int,
    seed: int,
    *,
    correlation: np.ndarray = None,
    coverage: float = 0.95,
    output_unit: Unit = ONE,
    quantity_kind: QuantityKind = None,
    source_id: str = "monte_carlo",
) -> MonteCarloResult:
    """Propagate distributions through `model` by Monte Carlo sampling.

    `model` receives one numpy array per input (all of length n_draws)
    and must return an array of outputs. Correlated inputs are drawn
    through a gaussian copula. Draws come from a counter-based Philox
    generator keyed by the seed, so results are reproducible and do not
    depend on evaluation order.
    """
    if n_draws < 10_000:
        raise ValueError("n_draws must be >= 10^4")
    n = len(inputs)
    rng = np.random.Generator(np.random.Philox(key=seed))
    z = rng.standard_normal((n_draws, n))

    if correlation is not None:
        r = np.asarray(correlation, dtype=float)
        if r.shape != (n, n):
            raise LengthMismatch(f"correlation shape {r.shape} != ({n}, {n})")
        w, v = np.linalg.eigh((r + r.T) / 2)
        if w.min() < -1e-10:
            raise NonPSDCorrelation(f"min eigenvalue {w.min()}")
        factor = v * np.sqrt(np.clip(w, 0, None))
        z = z @ factor.T

    columns = [spec.transform(z[:, i]) for i, spec in enumerate(inputs)]
    y = np.asarray(model(*columns), dtype=float)
    if y.shape != (n_draws,):
        raise ValueError(f"model output shape {y.shape}, expected ({n_draws},)")
    finite = np.isfinite(y)
    if not finite.all():
        raise ModelEvaluationFailure(int(np.argmin(finite)))

    mean = float(np.mean(y))
    std = float(np.std(y, ddof=1))

    ys = np.sort(y)
    m = int(math.ceil(coverage * n_draws))
    widths = ys[m - 1:] - ys[: n_draws - m + 1]
    i = int(np.argmin(widths))
    interval = (float(ys[i]), float(ys[i + m - 1]))

    if quantity_kind is None:
        quantity_kind = _kind_for(output_unit)
    measurement = Measurement(
        value=mean,
        u_random=std,
        u_systematic=0.0,
        unit=output_unit,
        quantity_kind=quantity_kind,
        timestamp=0,
        source_id=source_id,
    )
    return MonteCarloResult(measurement, interval, coverage, n_draws)


def coverage_interval(m: Measurement, k: float) -> tuple:
    """Expanded-uncertainty interval value +/- k * u_c."""
    if k <= 0:
        raise ValueError("coverage factor k must be > 0")
    half = k * m.u_c
    return (m.value - half, m.value + half)
