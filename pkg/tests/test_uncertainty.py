import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metrotwin import (
    DistributionSpec,
    LengthMismatch,
    Measurement,
    ModelEvaluationFailure,
    NonPSDCorrelation,
    NonPSDCovariance,
    QuantityKind,
    UncertainVector,
    combine_linear,
    coverage_interval,
    monte_carlo_propagate,
    units,
)

ONE = units.ONE


def vec(values, u, systematic=None):
    return UncertainVector.independent(
        values, u, [ONE] * len(values), systematic=systematic
    )


def correlated_pair(values, u, r):
    cov = (
        (u[0] ** 2, r * u[0] * u[1]),
        (r * u[0] * u[1], u[1] ** 2),
    )
    return UncertainVector(tuple(values), cov, (ONE, ONE))


class TestCombineLinear:
    def test_sum_of_independent_inputs_quadrature(self):
        m = combine_linear([1, 1], vec([1.0, 2.0], [0.3, 0.4]), ONE)
        assert m.value == 3.0
        assert math.isclose(m.u_c, 0.5, rel_tol=1e-12)

    def test_identity_case(self):
        m = combine_linear([1], vec([5.0], [0.2]), ONE)
        assert m.value == 5.0
        assert math.isclose(m.u_c, 0.2, rel_tol=1e-12)

    def test_full_correlation_adds_linearly(self):
        m = combine_linear([1, 1], correlated_pair([0.0, 0.0], [1.0, 1.0], 1.0), ONE)
        assert math.isclose(m.u_c, 2.0, rel_tol=1e-12)

    def test_partial_correlation_against_monte_carlo(self):
        # c=[2,-1], u=[0.5,0.5], r=0.5 -> analytic u_c = sqrt(0.75)
        inputs = correlated_pair([0.0, 0.0], [0.5, 0.5], 0.5)
        m = combine_linear([2, -1], inputs, ONE)
        assert math.isclose(m.u_c, math.sqrt(0.75), rel_tol=1e-12)

        n = 10 ** 6
        mc = monte_carlo_propagate(
            lambda a, b: 2 * a - b,
            [DistributionSpec.gaussian(0.0, 0.5), DistributionSpec.gaussian(0.0, 0.5)],
            n,
            seed=123,
            correlation=np.array([[1.0, 0.5], [0.5, 1.0]]),
        )
        se_u = mc.measurement.u_c / math.sqrt(2 * n)
        assert abs(mc.measurement.u_c - m.u_c) < 3 * se_u

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            combine_linear([1, 1, 1], vec([1.0, 2.0], [0.1, 0.1]), ONE)

    def test_non_psd_covariance_rejected(self):
        with pytest.raises((NonPSDCovariance, ValueError)):
            # correlation far outside [-1, 1] makes the quadratic form negative
            UncertainVector((0.0, 0.0), ((1.0, 2.0), (2.0, 1.0)), (ONE, ONE))

    def test_systematic_split_projection(self):
        # one systematic, one random input with c=[1,1]
        inputs = vec([0.0, 0.0], [0.3, 0.4], systematic=(True, False))
        m = combine_linear([1, 1], inputs, ONE)
        assert math.isclose(m.u_systematic, 0.3, rel_tol=1e-12)
        assert math.isclose(m.u_random, 0.4, rel_tol=1e-12)
        assert math.isclose(m.u_c, 0.5, rel_tol=1e-12)

    def test_unit_scale_conversion(self):
        # input in bar contributes to a pascal-valued output
        inputs = UncertainVector((1.0,), ((0.01 ** 2,),), (units.BAR,))
        m = combine_linear([1.0], inputs, units.PASCAL,
                           quantity_kind=QuantityKind.PRESSURE)
        assert math.isclose(m.value, 100000.0)
        assert math.isclose(m.u_c, 1000.0, rel_tol=1e-12)


class TestMonteCarlo:
    def test_identity_model_unit_sigma(self):
        n = 10 ** 6
        mc = monte_carlo_propagate(
            lambda x: x, [DistributionSpec.gaussian(0.0, 1.0)], n, seed=7
        )
        assert abs(mc.measurement.u_c - 1.0) < 0.003

    def test_sum_of_gaussians_quadrature(self):
        n = 10 ** 6
        mc = monte_carlo_propagate(
            lambda a, b: a + b,
            [DistributionSpec.gaussian(0.0, 3.0), DistributionSpec.gaussian(0.0, 4.0)],
            n,
            seed=11,
        )
        se_u = 5.0 / math.sqrt(2 * n)
        assert abs(mc.measurement.u_c - 5.0) < 3 * se_u

    def test_nonlinear_power_model_first_order_adequacy(self):
        # y = V^2/R with small relative uncertainties: first-order GUM
        # should agree with the MC oracle within 1% of u_c
        v, r = 10.0, 5.0
        u_v, u_r = 0.1, 0.05
        mc = monte_carlo_propagate(
            lambda vv, rr: vv ** 2 / rr,
            [DistributionSpec.gaussian(v, u_v), DistributionSpec.gaussian(r, u_r)],
            10 ** 6,
            seed=42,
        )
        sens = [2 * v / r, -(v ** 2) / r ** 2]
        gum = combine_linear(sens, vec([0.0, 0.0], [u_v, u_r]), ONE)
        assert abs(mc.measurement.u_c - gum.u_c) < 0.01 * gum.u_c

    def test_deterministic_for_fixed_seed(self):
        spec = [DistributionSpec.uniform(-1.0, 1.0)]
        a = monte_carlo_propagate(lambda x: x, spec, 10 ** 4, seed=99)
        b = monte_carlo_propagate(lambda x: x, spec, 10 ** 4, seed=99)
        assert a.measurement.value == b.measurement.value
        assert a.interval == b.interval

    def test_minimum_draws_enforced(self):
        with pytest.raises(ValueError):
            monte_carlo_propagate(
                lambda x: x, [DistributionSpec.gaussian(0, 1)], 100, seed=1
            )

    def test_non_psd_correlation_rejected(self):
        with pytest.raises(NonPSDCorrelation):
            monte_carlo_propagate(
                lambda a, b: a + b,
                [DistributionSpec.gaussian(0, 1)] * 2,
                10 ** 4,
                seed=1,
                correlation=np.array([[1.0, 2.0], [2.0, 1.0]]),
            )

    def test_model_failure_reports_draw_index(self):
        def bad(x):
            y = np.array(x)
            y[123] = np.nan
            return y

        with pytest.raises(ModelEvaluationFailure) as exc:
            monte_carlo_propagate(
                bad, [DistributionSpec.gaussian(0, 1)], 10 ** 4, seed=1
            )
        assert "123" in str(exc.value)

    def test_shortest_interval_for_skewed_output(self):
        # exp(gaussian) is right-skewed; shortest interval sits left of
        # the equal-tailed one and still covers ~95% of draws
        mc = monte_carlo_propagate(
            lambda x: np.exp(x), [DistributionSpec.gaussian(0.0, 1.0)],
            10 ** 5, seed=5,
        )
        lo, hi = mc.interval
        assert lo < hi
        assert lo < 1.0 < hi
        equal_tailed = (math.exp(-1.96), math.exp(1.96))
        assert (hi - lo) < (equal_tailed[1] - equal_tailed[0])

    def test_uniform_and_triangular_standard_deviations(self):
        n = 2 * 10 ** 5
        mc_u = monte_carlo_propagate(
            lambda x: x, [DistributionSpec.uniform(0.0, 1.0)], n, seed=3
        )
        assert abs(mc_u.measurement.u_c - 1 / math.sqrt(12)) < 0.005
        mc_t = monte_carlo_propagate(
            lambda x: x, [DistributionSpec.triangular(0.0, 1.0)], n, seed=4
        )
        assert abs(mc_t.measurement.u_c - 1 / math.sqrt(24)) < 0.005


class TestCoverageInterval:
    def test_expanded_uncertainty_k2(self):
        m = Measurement(10.0, 0.5, 0.0, ONE, QuantityKind.DIMENSIONLESS, 0, "a")
        assert coverage_interval(m, 2.0) == (9.0, 11.0)

    def test_zero_uncertainty(self):
        m = Measurement(0.0, 0.0, 0.0, ONE, QuantityKind.DIMENSIONLESS, 0, "a")
        assert coverage_interval(m, 2.0) == (0.0, 0.0)

    def test_quadrature_then_width(self):
        m = Measurement(3.0, 0.3, 0.4, ONE, QuantityKind.DIMENSIONLESS, 0, "a")
        lo, hi = coverage_interval(m, 1.0)
        assert math.isclose(lo, 2.5, rel_tol=1e-12)
        assert math.isclose(hi, 3.5, rel_tol=1e-12)

    def test_k_must_be_positive(self):
        m = Measurement(0.0, 0.1, 0.0, ONE, QuantityKind.DIMENSIONLESS, 0, "a")
        with pytest.raises(ValueError):
            coverage_interval(m, 0.0)

    def test_gaussian_coverage_fraction(self):
        # k=2 interval should cover ~95.45% of gaussian true values
        rng = np.random.Generator(np.random.Philox(key=2026))
        n = 10 ** 5
        u = 1.3
        truth = 4.2
        values = truth + rng.normal(0.0, u, n)
        inside = 0
        for v in values:
            lo = v - 2 * u
            hi = v + 2 * u
            inside += lo <= truth <= hi
        frac = inside / n
        assert 0.949 <= frac <= 0.961


# --- property tests ---

finite = st.floats(min_value=-100, max_value=100, allow_nan=False)
small_u = st.floats(min_value=0.0, max_value=10.0, allow_nan=False)


@given(
    st.lists(st.tuples(finite, finite, small_u), min_size=1, max_size=6),
)
def test_quadrature_property_independent_inputs(rows):
    c = [r[0] for r in rows]
    x = [r[1] for r in rows]
    u = [r[2] for r in rows]
    m = combine_linear(c, vec(x, u), ONE)
    expected = math.sqrt(math.fsum((ci * ui) ** 2 for ci, ui in zip(c, u)))
    assert math.isclose(m.u_c, expected, rel_tol=1e-12, abs_tol=1e-12)


@given(
    st.lists(st.tuples(finite, finite, small_u), min_size=1, max_size=4),
    st.floats(min_value=-50, max_value=50, allow_nan=False).filter(
        lambda v: abs(v) > 1e-6
    ),
)
def test_scale_equivariance(rows, lam):
    c = [r[0] for r in rows]
    x = [r[1] for r in rows]
    u = [r[2] for r in rows]
    base = combine_linear(c, vec(x, u), ONE)
    scaled = combine_linear([lam * ci for ci in c], vec(x, u), ONE)
    assert math.isclose(scaled.value, lam * base.value, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(scaled.u_c, abs(lam) * base.u_c, rel_tol=1e-9, abs_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=2 ** 31))
def test_psd_covariance_never_yields_nan(n, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    a = rng.normal(size=(n, n))
    cov = a @ a.T  # PSD by construction
    cov = (cov + cov.T) / 2
    values = rng.normal(size=n)
    c = rng.normal(size=n)
    inputs = UncertainVector(
        tuple(values), tuple(map(tuple, cov.tolist())), (ONE,) * n
    )
    m = combine_linear(c, inputs, ONE)
    assert math.isfinite(m.value)
    assert math.isfinite(m.u_c)
    assert m.u_c >= 0.0


@settings(max_examples=20, deadline=None)
@given(
    st.integers(min_value=1, max_value=3),
    st.integers(min_value=0, max_value=2 ** 31),
)
def test_mc_analytic_equivalence_affine_models(n, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    c = rng.uniform(-2, 2, n)
    mu = rng.uniform(-5, 5, n)
    sigma = rng.uniform(0.1, 2.0, n)
    const = rng.uniform(-1, 1)
    gum = combine_linear(c, vec(mu, sigma), ONE)

    def model(*cols):
        return const + sum(ci * col for ci, col in zip(c, cols))

    n_draws = 10 ** 5
    mc = monte_carlo_propagate(
        model,
        [DistributionSpec.gaussian(m, s) for m, s in zip(mu, sigma)],
        n_draws,
        seed=seed,
    )
    se_mean = gum.u_c / math.sqrt(n_draws)
    se_u = gum.u_c / math.sqrt(2 * n_draws)
    assert abs(mc.measurement.value - (gum.value + const)) < 4 * se_mean
    assert abs(mc.measurement.u_c - gum.u_c) < 4 * se_u
