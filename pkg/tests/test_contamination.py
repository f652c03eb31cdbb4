import unittest

import numpy as np
import pytest

from mcp_guardrails import contamination as cm
from mcp_guardrails.domains import BoxDomain, PointSetDomain
from mcp_guardrails.errors import (
    ArgumentError,
    ConfigurationError,
    HypothesisViolatedError,
    InvalidGuardrailError,
)
from mcp_guardrails.framework import benefit
from mcp_guardrails.mc_engine import RngStream

LINE = cm.BoundedLinearModel((1.0, 2.0), BoxDomain.unit(1), intercept=True)
SPIKE = cm.ResponseContamination(magnitude=5.0, propensity=0.2)


class TestResponseContamination(unittest.TestCase):
    def test_plim_bias_is_mean_contamination(self):
        plim = cm.response_plim(LINE, SPIKE)
        self.assertAlmostEqual(plim.bias, 1.0)
        self.assertAlmostEqual(plim.loss, 1.0)

    def test_general_contamination_needs_mean_or_stream(self):
        cont = cm.ResponseContamination(sampler=lambda rng, size: rng.exponential(2.0, size))
        with self.assertRaises(ConfigurationError):
            cont.expectation()
        self.assertAlmostEqual(cont.expectation(RngStream(1), n=200_000), 2.0, delta=0.03)
        known = cm.ResponseContamination(sampler=cont.sampler, mean=2.0)
        self.assertEqual(known.expectation(), 2.0)

    def test_fit_is_shifted_by_bias(self):
        data = cm.simulate_response_contaminated(LINE, SPIKE, 200_000, RngStream(2))
        intercept, slope = data.fit()
        self.assertAlmostEqual(intercept, 2.0, delta=0.05)
        self.assertAlmostEqual(slope, 2.0, delta=0.08)
        self.assertLess(cm.max_prediction_bias(data, LINE, 1.0), 0.1)
        self.assertIsInstance(cm.ols_predict(data, [0.5]), float)
        self.assertEqual(cm.ols_predict(data, [[0.0], [1.0]]).shape, (2,))

    def test_upper_only_condition(self):
        verdict = cm.response_guardrail_condition(LINE, SPIKE, upper=2.5)
        self.assertTrue(verdict.holds)
        self.assertAlmostEqual(verdict.upper_threshold, 2.0)
        self.assertFalse(verdict.two_sided)
        self.assertFalse(cm.response_guardrail_condition(LINE, SPIKE, upper=1.5).holds)

    def test_two_sided_condition(self):
        verdict = cm.response_guardrail_condition(LINE, SPIKE, upper=2.0, lower=2.0)
        self.assertTrue(verdict.holds)
        self.assertAlmostEqual(verdict.lower_threshold, 2.0)
        self.assertTrue(verdict.two_sided)
        with self.assertRaises(InvalidGuardrailError):
            cm.response_guardrail_condition(LINE, SPIKE, upper=1.0, lower=2.0)

    def test_loss_never_exceeds_squared_bias_at_threshold(self):
        rows = cm.mse_compare_response(LINE, SPIKE, upper=2.0)
        self.assertEqual(len(rows), 100)
        self.assertTrue(all(r.loss_safeguarded <= 1.0 + 1e-12 for r in rows))
        self.assertFalse(any(r.worsened for r in rows))

    def test_bound_below_threshold_can_hurt(self):
        rows = cm.mse_compare_response(LINE, SPIKE, upper=3.0 - 1.0 - 0.1)
        self.assertTrue(any(r.loss_safeguarded > 1.0 for r in rows))
        self.assertTrue(any(r.worsened for r in rows))

    def test_validation(self):
        with self.assertRaises(ArgumentError):
            cm.ResponseContamination(5.0, 1.5)
        with self.assertRaises(ArgumentError):
            cm.BoundedLinearModel((1.0,), BoxDomain.unit(2))
        with self.assertRaises(ArgumentError):
            cm.simulate_response_contaminated(LINE, SPIKE, 2, RngStream(0))


def test_model_extremes():
    assert LINE.extremes() == (1.0, 3.0)
    points = cm.BoundedLinearModel((1.0, -1.0), PointSetDomain(((0.0, 1.0), (2.0, 0.5))))
    assert points.extremes() == (-1.0, 1.5)


def test_box_second_moment():
    moment = cm.box_second_moment(BoxDomain.unit(2))
    np.testing.assert_allclose(moment, [[1 / 3, 1 / 4], [1 / 4, 1 / 3]])


def test_symmetric_two_point():
    draw = cm.symmetric_two_point([1.0, 0.0], 0.25)
    sample = draw(RngStream(3).generator(), 100_000)
    assert sample.shape == (100_000, 2)
    assert np.mean(sample[:, 0] == 1.0) == pytest.approx(0.25, abs=0.01)
    assert np.mean(sample[:, 0] == -1.0) == pytest.approx(0.25, abs=0.01)
    with pytest.raises(ArgumentError):
        cm.symmetric_two_point([1.0], 0.6)


class TestCovariateContamination(unittest.TestCase):
    def scalar(self) -> cm.CovariateContamination:
        return cm.CovariateContamination(
            cm.gaussian_vector([[1.0]]),
            cm.gaussian_vector([[0.5]]),
            sigma1=np.array([[1.0]]),
            sigma2=np.array([[0.5]]),
        )

    def test_scalar_attenuation(self):
        plim = cm.covariate_plim(self.scalar(), [2.0])
        self.assertAlmostEqual(plim.coefficients[0], 2.0 / 1.5)
        self.assertFalse(plim.consistent)

    def test_simulated_fit_attenuates(self):
        data = cm.simulate_covariate_contaminated(self.scalar(), [2.0], 200_000, 1.0, RngStream(4))
        self.assertAlmostEqual(data.fit()[0], 2.0 / 1.5, delta=0.02)

    def test_error_orthogonal_to_beta_is_consistent(self):
        cont = cm.CovariateContamination.on_domain(
            BoxDomain.unit(2), cm.symmetric_two_point([0.0, 1.0], 0.25)
        )
        plim = cm.covariate_plim(cont, [1.0, 0.0], RngStream(5), n=100_000)
        self.assertTrue(plim.consistent)
        np.testing.assert_allclose(plim.coefficients, [1.0, 0.0], atol=1e-12)

    def test_second_moments_need_stream(self):
        cont = cm.CovariateContamination.on_domain(BoxDomain.unit(1), cm.zero_vector(1))
        with self.assertRaises(ConfigurationError):
            cont.second_moments()


def _certified_setup() -> cm.CovariateContamination:
    """Clean training data; deployment error shifts ``Z @ beta`` by +/-1 (probability 1/4 each)."""
    return cm.CovariateContamination.on_domain(
        BoxDomain.unit(2),
        cm.zero_vector(2),
        deployment_error=cm.symmetric_two_point([0.5, 0.5], 0.25),
        sigma2=np.zeros((2, 2)),
    )


class TestCovariateGuardrail(unittest.TestCase):
    beta = (1.0, 1.0)

    def test_condition_thresholds(self):
        verdict = cm.covariate_guardrail_condition(
            _certified_setup(), self.beta, (0.4, 1.6), 1.0, 0.2, RngStream(6)
        )
        self.assertTrue(verdict.holds)
        self.assertAlmostEqual(verdict.slack, 0.5)
        self.assertAlmostEqual(verdict.lower_threshold, 0.5)
        self.assertAlmostEqual(verdict.upper_threshold, 1.5)
        self.assertTrue(verdict.certificate.certified)
        narrow = cm.covariate_guardrail_condition(
            _certified_setup(), self.beta, (0.6, 1.6), 1.0, 0.2, RngStream(6)
        )
        self.assertFalse(narrow.holds)

    def test_hypothesis_violations(self):
        setup = _certified_setup()
        with self.assertRaises(HypothesisViolatedError):
            cm.covariate_guardrail_condition(setup, self.beta, (0.4, 1.6), 1.0, 0.6, RngStream(7))
        with self.assertRaises(HypothesisViolatedError):
            cm.covariate_guardrail_condition(setup, self.beta, (0.4, 1.6), 2.0, 0.2, RngStream(7))
        noisy = cm.CovariateContamination.on_domain(
            BoxDomain.unit(2), cm.symmetric_two_point([0.5, 0.5], 0.2)
        )
        with self.assertRaises(HypothesisViolatedError):
            cm.covariate_guardrail_condition(noisy, self.beta, (0.4, 1.6), 1.0, 0.2, RngStream(7))

    def test_no_separated_violation_when_condition_holds(self):
        comparison = cm.mse_compare_covariate(
            _certified_setup(), self.beta, 0.4, 1.6, 100_000, RngStream(8)
        )
        self.assertFalse(comparison.separated_violation)
        self.assertAlmostEqual(comparison.loss_algorithmic.mean, 0.5, delta=0.02)

    def test_decision_model_feeds_framework_benefit(self):
        model, loss = cm.covariate_decision_model(
            _certified_setup(), self.beta, 0.4, 1.6, beta_hat=self.beta
        )
        est = benefit(model, loss, n=100_000, stream=RngStream(9))
        comparison = cm.mse_compare_covariate(
            _certified_setup(), self.beta, 0.4, 1.6, 100_000, RngStream(10), beta_hat=self.beta
        )
        self.assertTrue(est.direct.agrees_with(comparison.difference))


def test_mse_compare_dispatch():
    rows = cm.mse_compare(cm.ResponseSetup(LINE, SPIKE), (-np.inf, 2.0))
    assert isinstance(rows, list) and rows
    finite = cm.mse_compare(
        cm.ResponseSetup(LINE, SPIKE), (-np.inf, 2.0), n=10_000, stream=RngStream(11)
    )
    assert len(finite) == len(rows)
    setup = cm.CovariateSetup(_certified_setup(), (1.0, 1.0))
    with pytest.raises(ArgumentError):
        cm.mse_compare(setup, (0.4, 1.6))
    with pytest.raises(InvalidGuardrailError):
        cm.mse_compare(setup, (2.0, 1.0))
