import math
import unittest

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mcp_guardrails.domains import BoxDomain
from mcp_guardrails.errors import (
    ArgumentError,
    ConfigurationError,
    DomainError,
    InvalidGuardrailError,
)
from mcp_guardrails.framework import (
    INF,
    ConditionKind,
    GuardrailSpec,
    LossSpec,
    Verdict,
    benefit,
    benefit_curve,
    check_loss,
    clip,
    compose_model,
    condition_report,
    curve_peak,
    decide,
    gaussian_sampler,
    independence_diagnostic,
    is_unimodal,
    prediction_model,
    regression_model,
    tightness_counterexample,
)
from mcp_guardrails.mc_engine import EstimateWithCI, RngStream

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def _upper_benefit_oracle(u: float) -> float:
    """E[(X^2 - u^2) 1(X >= u)] for X ~ N(0, 1)."""
    tail = stats.norm.sf(u)
    return u * stats.norm.pdf(u) + tail - u * u * tail


def test_clip_examples():
    assert clip(5, 1, 3) == 3
    assert clip(2, 1, 3) == 2
    assert clip(0, 1, 3) == 1
    assert clip(7.0) == 7.0


def test_clip_rejects_crossed_bounds():
    with pytest.raises(InvalidGuardrailError):
        clip(0.0, 2.0, 1.0)
    with pytest.raises(InvalidGuardrailError):
        clip(np.zeros(3), np.array([0.0, 2.0, 0.0]), 1.0)


@given(x=finite, a=finite, b=finite)
def test_clip_is_idempotent(x, a, b):
    lo, hi = min(a, b), max(a, b)
    once = clip(x, lo, hi)
    assert clip(once, lo, hi) == once
    assert lo <= once <= hi
    if lo <= x <= hi:
        assert once == x


class TestBenefit(unittest.TestCase):
    def setUp(self):
        self.stream = RngStream(11)
        self.loss = LossSpec.squared(0.0)

    def test_half_normal_upper_at_zero(self):
        model = prediction_model(0.0, 1.0, 1, upper=0.0)
        est = benefit(model, self.loss, "quadrature")
        self.assertAlmostEqual(est.direct.mean, 0.5, delta=1e-7)
        self.assertAlmostEqual(est.identity.mean, 0.5, delta=1e-7)

    def test_monte_carlo_matches_quadrature_oracle(self):
        model = prediction_model(0.0, 1.0, 1, upper=0.5)
        exact = _upper_benefit_oracle(0.5)
        quad = benefit(model, self.loss, "quadrature")
        self.assertAlmostEqual(quad.direct.mean, exact, delta=1e-7)
        mc = benefit(model, self.loss, "monte-carlo", n=200_000, stream=self.stream)
        self.assertTrue(mc.direct.contains(exact))

    def test_identity_equals_direct_draw_by_draw(self):
        model = compose_model(
            gaussian_sampler(0.3, 1.2),
            GuardrailSpec(
                lower=lambda rng, size, w: rng.uniform(-2.0, -0.5, size),
                upper=lambda rng, size, w: rng.uniform(0.0, 1.5, size),
            ),
        )
        est = benefit(model, self.loss, n=50_000, stream=self.stream)
        self.assertAlmostEqual(est.discrepancy, 0.0, delta=1e-10)

    def test_no_bounds_means_no_benefit(self):
        model = compose_model(gaussian_sampler(1.0, 2.0), GuardrailSpec())
        est = benefit(model, self.loss, n=10_000, stream=self.stream)
        self.assertEqual(est.direct.mean, 0.0)
        self.assertEqual(est.direct.half_width, 0.0)

    def test_bounds_enclosing_optimum_never_hurt(self):
        model = compose_model(
            gaussian_sampler(0.0, 3.0),
            GuardrailSpec(
                lower=lambda rng, size, w: -rng.exponential(1.0, size),
                upper=lambda rng, size, w: rng.exponential(1.0, size),
            ),
        )
        est = benefit(model, self.loss, n=20_000, stream=self.stream)
        self.assertGreater(est.direct.mean, 0.0)

    def test_non_finite_loss_is_domain_error(self):
        loss = LossSpec(evaluate=lambda x: np.where(x > 2.0, np.inf, x * x), minimizer=0.0)
        model = compose_model(gaussian_sampler(0.0, 1.0), GuardrailSpec(upper=1.0))
        with self.assertRaises(DomainError):
            benefit(model, loss, n=10_000, stream=self.stream)

    def test_quadrature_needs_densities(self):
        model = compose_model(gaussian_sampler(0.0, 1.0), GuardrailSpec(upper=1.0))
        with self.assertRaises(ConfigurationError):
            benefit(model, self.loss, "quadrature")

    def test_unknown_method(self):
        with self.assertRaises(ArgumentError):
            benefit(prediction_model(0.0, 1.0, 1), self.loss, "bootstrap")

    def test_crossed_bounds_in_draws(self):
        model = compose_model(gaussian_sampler(0.0, 1.0), GuardrailSpec(lower=1.0, upper=0.0))
        with self.assertRaises(InvalidGuardrailError):
            benefit(model, self.loss, n=100, stream=self.stream)


class TestConditionReport(unittest.TestCase):
    """Prediction with n = 100 draws of variance 1 under a deterministic upper bound."""

    def setUp(self):
        self.loss = LossSpec.squared(0.0)
        self.stream = RngStream(12)

    def test_small_human_error_is_sufficient(self):
        model = prediction_model(0.0, 1.0, 100, upper=-0.05)
        report = condition_report(model, self.loss, ConditionKind.REDUCED_SUFFICIENT, "quadrature")
        self.assertEqual(report.verdict, Verdict.HOLDS)
        self.assertAlmostEqual(report.lhs.mean, 0.005, delta=1e-8)
        self.assertAlmostEqual(report.rhs.mean, 0.0025, delta=1e-8)
        self.assertGreater(benefit(model, self.loss, "quadrature").direct.mean, 0.0)

    def test_large_human_error_fails_necessary(self):
        model = prediction_model(0.0, 1.0, 100, upper=-0.15)
        report = condition_report(model, self.loss, ConditionKind.REDUCED_NECESSARY, "quadrature")
        self.assertEqual(report.verdict, Verdict.FAILS)
        self.assertLess(benefit(model, self.loss, "quadrature").direct.mean, 0.0)

    def test_absent_upper_bound_holds_trivially(self):
        model = prediction_model(0.0, 1.0, 100)
        report = condition_report(
            model, self.loss, ConditionKind.SUFFICIENT_UPPER, n=10_000, stream=self.stream
        )
        self.assertEqual(report.lhs.mean, 0.0)
        self.assertEqual(report.rhs.mean, 0.0)
        self.assertEqual(report.verdict, Verdict.HOLDS)

    def test_two_sided_reduces_to_one_sided(self):
        model = compose_model(
            gaussian_sampler(0.0, 1.0),
            GuardrailSpec(upper=lambda rng, size, w: rng.normal(-0.2, 0.3, size)),
        )
        one = condition_report(
            model, self.loss, ConditionKind.SUFFICIENT_UPPER, n=20_000, stream=self.stream
        )
        two = condition_report(
            model, self.loss, ConditionKind.SUFFICIENT_TWO_SIDED, n=20_000, stream=self.stream
        )
        self.assertAlmostEqual(one.lhs.mean, two.lhs.mean, delta=1e-12)
        self.assertAlmostEqual(one.rhs.mean, two.rhs.mean, delta=1e-12)

    def test_missing_minimizer(self):
        loss = LossSpec(evaluate=lambda x: x * x)
        with self.assertRaises(ConfigurationError):
            condition_report(
                prediction_model(0.0, 1.0, 1, 0.0), loss, ConditionKind.SUFFICIENT_UPPER,
                n=100, stream=self.stream,
            )

    def test_reduced_kind_needs_independence_flag(self):
        model = compose_model(gaussian_sampler(0.0, 1.0), GuardrailSpec(upper=0.0))
        with self.assertRaises(ArgumentError):
            condition_report(
                model, self.loss, ConditionKind.REDUCED_SUFFICIENT, n=100, stream=self.stream
            )

    def test_one_sided_kind_rejects_lower_bound(self):
        model = compose_model(gaussian_sampler(0.0, 1.0), GuardrailSpec(lower=-1.0, upper=1.0))
        with self.assertRaises(ArgumentError):
            condition_report(
                model, self.loss, ConditionKind.SUFFICIENT_UPPER, n=100, stream=self.stream
            )


def test_decide_tiers():
    assert decide(EstimateWithCI(1.0, 0.1, 10), EstimateWithCI(0.5, 0.1, 10)) is Verdict.HOLDS
    assert decide(EstimateWithCI(0.0, 0.1, 10), EstimateWithCI(0.5, 0.1, 10)) is Verdict.FAILS
    close = decide(EstimateWithCI(0.5, 0.1, 10), EstimateWithCI(0.55, 0.1, 10))
    assert close is Verdict.INCONCLUSIVE


def test_sufficient_implies_nonnegative_benefit(stream):
    loss = LossSpec.squared(0.0)
    model = compose_model(
        gaussian_sampler(0.5, 1.0),
        GuardrailSpec(upper=lambda rng, size, w: rng.normal(-0.05, 0.02, size)),
    )
    report = condition_report(
        model, loss, ConditionKind.SUFFICIENT_UPPER, n=50_000, stream=stream
    )
    est = benefit(model, loss, n=50_000, stream=stream)
    assert report.verdict is Verdict.HOLDS
    assert est.direct.upper >= 0.0


class TestBenefitCurve(unittest.TestCase):
    def setUp(self):
        self.loss = LossSpec.squared(0.0)

    def family(self, x_h: float):
        return prediction_model(0.0, 1.0, 1, upper=x_h)

    def test_peak_at_optimum(self):
        curve = benefit_curve(
            self.family, self.loss, [-2, -1, 0, 1, 2], n=50_000, stream=RngStream(13)
        )
        self.assertEqual(curve_peak(curve), 0.0)
        self.assertTrue(is_unimodal(curve))

    def test_infinite_bound_gives_zero(self):
        curve = benefit_curve(self.family, self.loss, [0.0, INF], method="quadrature")
        self.assertEqual(curve[-1].benefit.mean, 0.0)

    def test_quadrature_matches_oracle(self):
        curve = benefit_curve(self.family, self.loss, [-1.0, 0.0, 1.0], method="quadrature")
        for point in curve:
            self.assertAlmostEqual(point.benefit.mean, _upper_benefit_oracle(point.x_h), delta=1e-7)

    def test_grid_validation(self):
        with self.assertRaises(ArgumentError):
            benefit_curve(self.family, self.loss, [])
        with self.assertRaises(ArgumentError):
            benefit_curve(self.family, self.loss, [1.0, 0.0], method="quadrature")


def test_is_unimodal_flags_interior_dip():
    from mcp_guardrails.framework import CurvePoint

    values = [0.0, 1.0, 0.2, 1.5, 0.5]
    curve = [CurvePoint(float(i), EstimateWithCI(v, 0.01, 100)) for i, v in enumerate(values)]
    assert not is_unimodal(curve)


def test_tightness_counterexample():
    result = tightness_counterexample(0.25, 1.0, 0.0, 0.5)
    assert result.lhs == 0.5
    assert result.scaled_rhs == pytest.approx(0.375)
    assert result.lhs_ratio_check
    assert result.human_loss_mass.mean == pytest.approx(1.5, abs=1e-6)
    assert result.algorithmic_mass.mean == pytest.approx(0.5, abs=1e-6)
    assert result.loss_increase_bound == pytest.approx(0.25)
    assert result.benefit.mean <= -0.25 + 1e-3


def test_tightness_counterexample_rejects_bad_parameters():
    with pytest.raises(ArgumentError):
        tightness_counterexample(0.2, 1.0, 0.0, 0.5)
    with pytest.raises(ArgumentError):
        tightness_counterexample(0.25, 2.0, 0.0, 0.5)
    with pytest.raises(ArgumentError):
        tightness_counterexample(0.25, 1.0, 0.0, 0.7)


def test_check_loss(stream):
    assert check_loss(LossSpec.squared(1.0), stream, -3.0, 3.0).passed
    wavy = LossSpec(evaluate=lambda x: np.abs(np.sin(3.0 * x)), minimizer=0.0)
    assert not check_loss(wavy, stream, -2.0, 2.0).quasiconvex
    shifted = LossSpec(evaluate=lambda x: (x - 1.0) ** 2, minimizer=0.0)
    assert not check_loss(shifted, stream, -3.0, 3.0).minimizer_optimal


def test_profit_loss_is_shortfall():
    loss = LossSpec.from_profit(lambda p: p * (10.0 - p), 5.0)
    assert float(loss.loss(5.0)) == 0.0
    assert float(loss.loss(3.0)) == pytest.approx(4.0)


def test_independence_diagnostic(stream):
    assert independence_diagnostic(prediction_model(0.0, 1.0, 4, 0.5), 1000, stream).consistent
    correlated = compose_model(
        lambda rng, size, w: w,
        GuardrailSpec(upper=lambda rng, size, w: w + 1.0),
        covariate=lambda rng, size: rng.standard_normal(size),
    )
    assert not independence_diagnostic(correlated, 1000, stream).consistent


def test_regression_model_with_enclosing_bounds(stream):
    beta = np.array([1.0, -2.0])
    model, loss, beta_hat = regression_model(
        beta,
        BoxDomain.unit(2),
        n_train=50,
        noise_sd=1.0,
        stream=stream,
        lower=lambda rng, size, w: w @ beta - 0.1,
        upper=lambda rng, size, w: w @ beta + 0.1,
    )
    assert beta_hat.shape == (2,)
    est = benefit(model, loss, n=20_000, stream=stream.child(1))
    assert est.direct.mean >= 0.0
    report = condition_report(
        model, loss, ConditionKind.SUFFICIENT_COVARIATE, n=20_000, stream=stream.child(1)
    )
    assert report.rhs.mean == pytest.approx(0.0)


def test_regression_model_checks_dimension(stream):
    with pytest.raises(ArgumentError):
        regression_model([1.0], BoxDomain.unit(2), 50, 1.0, stream)
    assert math.isfinite(
        regression_model([0.5, 1.0], BoxDomain.unit(1), 50, 1.0, stream, intercept=True)[2][0]
    )
