import unittest

import numpy as np
import pytest

from mcp_guardrails import misspec
from mcp_guardrails.errors import (
    ArgumentError,
    ConditionInapplicableError,
    HypothesisViolatedError,
    NonpositiveSlopeError,
)
from mcp_guardrails.mc_engine import RngStream
from mcp_guardrails.misspec import DemandFamily, DemandOracle, GridExperiment

FIGURE_ORACLE = DemandOracle.exponential(1.0 / 3.0, 10.0)


def _noiseless_price(oracle: DemandOracle, exp: GridExperiment) -> float:
    quiet = GridExperiment(exp.c, exp.p_bar, exp.n, 1, 0.0)
    observations = misspec.run_grid_experiment(oracle, quiet, RngStream(0))
    return misspec.algorithmic_price_misspec(*misspec.ols_linear_fit(observations, quiet), exp.c)


class TestDemandOracle(unittest.TestCase):
    def test_closed_form_optima(self):
        self.assertAlmostEqual(FIGURE_ORACLE.optimal_price(1.0), 4.0)
        self.assertAlmostEqual(DemandOracle.isoelastic(2.0).optimal_price(1.0), 2.0)
        self.assertAlmostEqual(DemandOracle.linear(10.0, 1.0).optimal_price(1.0), 5.5)

    def test_custom_oracle_optimised_numerically(self):
        oracle = DemandOracle.custom(lambda p: 10.0 * np.exp(-p / 3.0))
        self.assertAlmostEqual(oracle.optimal_price(1.0, 10.0), 4.0, delta=1e-6)
        with self.assertRaises(ArgumentError):
            oracle.optimal_price(1.0)

    def test_nonincreasing(self):
        self.assertTrue(FIGURE_ORACLE.is_nonincreasing(1.0, 10.0))
        rising = DemandOracle.custom(lambda p: p)
        self.assertFalse(rising.is_nonincreasing(1.0, 10.0))

    def test_validation(self):
        with self.assertRaises(ArgumentError):
            DemandOracle.isoelastic(1.0)
        with self.assertRaises(ArgumentError):
            DemandOracle.exponential(-1.0)
        with self.assertRaises(ArgumentError):
            DemandOracle("quadratic", 1.0, 1.0)
        with self.assertRaises(ArgumentError):
            DemandOracle(DemandFamily.CUSTOM)


class TestGridExperiment(unittest.TestCase):
    def test_prices(self):
        exp = GridExperiment(1.0, 10.0, 10, 3)
        self.assertEqual(exp.prices[0], 1.0)
        self.assertEqual(exp.prices[-1], 10.0)
        self.assertAlmostEqual(exp.prices[1], 1.9)

    def test_interval_clamped_at_ends(self):
        exp = GridExperiment(1.0, 10.0, 10, 3)
        self.assertEqual(exp.interval(0), (1.0, pytest.approx(1.9)))
        self.assertEqual(exp.interval(10), (pytest.approx(9.1), 10.0))
        with self.assertRaises(ArgumentError):
            exp.interval(11)

    def test_validation(self):
        for args in [(-1.0, 10.0, 10, 3), (5.0, 5.0, 10, 3), (1.0, 10.0, 1, 3), (1.0, 10.0, 10, 0)]:
            with self.assertRaises(ArgumentError):
                GridExperiment(*args)
        with self.assertRaises(ArgumentError):
            GridExperiment(1.0, 10.0, 10, 3, noise_sd=-1.0)

    def test_isoelastic_needs_positive_cost(self):
        with self.assertRaises(ArgumentError):
            misspec.run_grid_experiment(
                DemandOracle.isoelastic(2.0), GridExperiment(0.0, 5.0, 10, 1), RngStream(0)
            )


def test_noiseless_rows_are_constant():
    exp = GridExperiment(1.0, 10.0, 10, 5, noise_sd=0.0)
    obs = misspec.run_grid_experiment(FIGURE_ORACLE, exp, RngStream(1))
    assert obs.shape == (11, 5)
    np.testing.assert_allclose(obs, np.repeat(FIGURE_ORACLE.demand(exp.prices)[:, None], 5, axis=1))


def test_row_means_converge():
    exp = GridExperiment(1.0, 10.0, 10, 100_000)
    obs = misspec.run_grid_experiment(FIGURE_ORACLE, exp, RngStream(2))
    np.testing.assert_allclose(obs.mean(axis=1), FIGURE_ORACLE.demand(exp.prices), atol=0.02)


def test_fit_recovers_linear_demand():
    exp = GridExperiment(0.0, 5.0, 10, 2, noise_sd=0.0)
    obs = misspec.run_grid_experiment(DemandOracle.linear(6.0, 1.0), exp, RngStream(3))
    alpha_hat, beta_hat = misspec.ols_linear_fit(obs, exp)
    assert alpha_hat == pytest.approx(6.0, abs=1e-12)
    assert beta_hat == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        misspec.ols_linear_fit(obs[:5], exp)


def test_fitted_slope_is_positive_in_figure_setting():
    exp = GridExperiment(1.0, 10.0, 10, 3)
    slopes = []
    for r in range(200):
        obs = misspec.run_grid_experiment(FIGURE_ORACLE, exp, RngStream(4, (r,)))
        slopes.append(misspec.ols_linear_fit(obs, exp)[1])
    assert min(slopes) > 0


def test_ai_deviation_bound_decays_in_replications():
    bounds = [
        misspec.ai_deviation_bound(FIGURE_ORACLE, GridExperiment(1.0, 10.0, 10, K), 0.5)
        for K in (1, 10, 100)
    ]
    assert bounds[0] > bounds[1] > bounds[2] > 0
    quiet = GridExperiment(1.0, 10.0, 10, 3, noise_sd=0.0)
    assert misspec.ai_deviation_bound(FIGURE_ORACLE, quiet, 0.5) == 0.0


def test_algorithmic_price():
    assert misspec.algorithmic_price_misspec(6.0, 1.0, 0.0) == 3.0
    with pytest.raises(NonpositiveSlopeError):
        misspec.algorithmic_price_misspec(6.0, -0.5, 0.0)


class TestLimitPrice(unittest.TestCase):
    def test_well_specified_limit_is_optimal(self):
        oracle = DemandOracle.linear(10.0, 1.0)
        exp = GridExperiment(1.0, 9.0, 8, 1)
        self.assertAlmostEqual(misspec.limit_algorithmic_price(oracle, exp), 5.5, delta=1e-10)

    def test_matches_noiseless_pipeline(self):
        rng = RngStream(5).generator()
        for _ in range(20):
            oracle = DemandOracle.exponential(rng.uniform(0.1, 1.0), rng.uniform(1.0, 20.0))
            c = rng.uniform(0.0, 2.0)
            exp = GridExperiment(c, c + rng.uniform(2.0, 10.0), int(rng.integers(2, 30)), 1)
            limit = misspec.limit_algorithmic_price(oracle, exp)
            self.assertAlmostEqual(limit, _noiseless_price(oracle, exp), delta=1e-10 * abs(limit))

    def test_monte_carlo_price_approaches_limit(self):
        exp = GridExperiment(1.0, 10.0, 10, 10_000)
        outcome = misspec.run_replication(FIGURE_ORACLE, exp, RngStream(6))
        limit = misspec.limit_algorithmic_price(FIGURE_ORACLE, exp)
        self.assertAlmostEqual(outcome.p_a, limit, delta=0.1)


class TestImprovementCondition(unittest.TestCase):
    def test_exponential_threshold(self):
        for c in (0.0, 1.0, 2.5):
            cond = misspec.improvement_condition(
                DemandOracle.exponential(2.0), GridExperiment(c, c + 10.0, 10, 1, 0.0)
            )
            self.assertAlmostEqual(cond.threshold_p_bar, 3.75 + 2.25 * c)
            self.assertIs(cond.family, DemandFamily.EXPONENTIAL)

    def test_strict_flag_is_limit_outside_interval(self):
        oracle = DemandOracle.isoelastic(2.0)
        exp = GridExperiment(1.0, 30.0, 10, 1, 0.0)
        cond = misspec.improvement_condition(oracle, exp)
        lo, hi = misspec.noiseless_interval(oracle, exp)
        self.assertEqual(cond.interval, (lo, hi))
        self.assertEqual(cond.strict_improvement, not lo <= cond.limit_price <= hi)

    def test_small_grid_inapplicable(self):
        with self.assertRaises(ConditionInapplicableError):
            misspec.improvement_condition(FIGURE_ORACLE, GridExperiment(1.0, 10.0, 6, 1))

    def test_linear_family_inapplicable(self):
        with self.assertRaises(ConditionInapplicableError):
            misspec.improvement_condition(
                DemandOracle.linear(10.0, 1.0), GridExperiment(1.0, 10.0, 10, 1)
            )


def test_concavity_estimate():
    exp = GridExperiment(1.0, 10.0, 10, 1)
    # exponential profit has an inflection at c + 2/a = 7
    with pytest.raises(HypothesisViolatedError):
        misspec.estimate_concavity(FIGURE_ORACLE, exp, strict=True)
    est = misspec.estimate_concavity(FIGURE_ORACLE, exp)
    assert est.lam > 0
    assert est.low <= 4.0 <= est.high
    assert est.high == pytest.approx(7.0, abs=0.05)


def test_human_miss_bound():
    quiet = GridExperiment(1.0, 10.0, 10, 100, 0.0)
    assert misspec.human_miss_bound(quiet, 0.1) == 0.0
    few = misspec.human_miss_bound(GridExperiment(1.0, 10.0, 10, 100), 0.1)
    many = misspec.human_miss_bound(GridExperiment(1.0, 10.0, 10, 10**8), 0.1)
    assert many < few


def test_replication_safeguard_helps_when_interval_contains_optimum():
    exp = GridExperiment(1.0, 10.0, 10, 1000)
    for r in range(20):
        outcome = misspec.run_replication(FIGURE_ORACLE, exp, RngStream(7, (r,)))
        assert outcome.p_lo <= outcome.p_safeguarded <= outcome.p_hi
        if outcome.contains_optimum:
            assert outcome.profit_safeguarded >= outcome.profit_a
        assert outcome.profit_optimal == pytest.approx(float(FIGURE_ORACLE.profit(4.0, 1.0)))


def test_finite_sample_check():
    exp = GridExperiment(1.0, 10.0, 10, 10_000)
    check = misspec.finite_sample_check(FIGURE_ORACLE, exp, 0.05, 50, RngStream(8))
    assert check.replications == 50
    assert check.degenerate == 0
    assert check.freq_ai_deviation <= 0.1
    assert check.human_within_bound
    with pytest.raises(ArgumentError):
        misspec.finite_sample_check(FIGURE_ORACLE, exp, 0.05, 0, RngStream(8))


def test_figure_series():
    exp = GridExperiment(1.0, 10.0, 10, 3)
    obs = misspec.run_grid_experiment(FIGURE_ORACLE, exp, RngStream(9))
    rows = misspec.figure_series(FIGURE_ORACLE, exp, obs)
    assert len(rows) == 11
    assert set(rows[0]) == {
        "price",
        "observed_demand",
        "fitted_demand",
        "true_demand",
        "empirical_profit",
        "true_profit",
    }
    assert rows[0]["empirical_profit"] == 0.0
    assert rows[-1]["true_demand"] == pytest.approx(10.0 * np.exp(-10.0 / 3.0))
