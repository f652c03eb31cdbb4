import math
import unittest

import numpy as np
import pytest
from scipy import integrate, stats

from mcp_guardrails import competition
from mcp_guardrails.competition import DuopolyParams, PriceHistoryModel
from mcp_guardrails.errors import (
    ArgumentError,
    HypothesisViolatedError,
    NonpositiveSlopeError,
)
from mcp_guardrails.mc_engine import RngStream

PARAMS = DuopolyParams(alpha=10.0, beta=2.0, gamma=1.0)
HIST = PriceHistoryModel(mu=4.0, sigma2=1.0, rho=0.0)


class TestLimitPrice(unittest.TestCase):
    def test_independent_history(self):
        self.assertAlmostEqual(competition.plim_price(PARAMS, HIST), 3.5)

    def test_perfectly_correlated_history_is_collusive(self):
        hist = PriceHistoryModel(4.0, 1.0, 1.0)
        self.assertAlmostEqual(competition.plim_price(PARAMS, hist), 5.0)
        self.assertAlmostEqual(competition.equilibrium_prices(PARAMS).collusive, 5.0)

    def test_no_competitor_effect(self):
        params = DuopolyParams(10.0, 2.0, 0.0)
        self.assertAlmostEqual(competition.plim_price(params, HIST), 2.5)

    def test_simulated_price_converges(self):
        outcome = competition.run_replication(PARAMS, HIST, 100_000, 3.2, RngStream(3))
        self.assertFalse(outcome.degenerate)
        self.assertAlmostEqual(outcome.p_a, 3.5, delta=0.1)
        self.assertEqual(outcome.p_matched, 3.2)


class TestMatchingThreshold(unittest.TestCase):
    def test_closed_form(self):
        self.assertEqual(competition.matching_threshold(PARAMS, HIST), 3.0)

    def test_oracle_agrees(self):
        self.assertAlmostEqual(
            competition.matching_threshold_oracle(PARAMS, HIST), 3.0, delta=1e-8
        )

    def test_revenue_sign_flips_at_threshold(self):
        p_a = competition.plim_price(PARAMS, HIST)
        for p_prime in (3.05, 3.2, 3.45):
            self.assertGreater(competition.revenue_compare(PARAMS, p_a, p_prime).improvement, 0)
        self.assertLess(competition.revenue_compare(PARAMS, p_a, 2.9).improvement, 0)

    def test_mean_below_nash_violates_hypothesis(self):
        hist = PriceHistoryModel(3.0, 1.0, 0.0)
        with self.assertRaises(HypothesisViolatedError):
            competition.matching_threshold(PARAMS, hist)

    def test_boundary_at_nash_mean(self):
        nash = competition.equilibrium_prices(PARAMS).nash
        hist = PriceHistoryModel(nash, 1.0, 0.0)
        self.assertAlmostEqual(competition.matching_threshold(PARAMS, hist), nash)
        self.assertTrue(competition.is_boundary_threshold(PARAMS, hist))
        self.assertFalse(competition.is_boundary_threshold(PARAMS, HIST))


def test_equilibria_and_best_response():
    eq = competition.equilibrium_prices(PARAMS)
    assert eq.nash == pytest.approx(10.0 / 3.0)
    # Nash is a fixed point of the best response
    assert competition.best_response(PARAMS, eq.nash) == pytest.approx(eq.nash)


def test_parameter_validation():
    with pytest.raises(ArgumentError):
        DuopolyParams(10.0, 1.0, 1.0)
    with pytest.raises(ArgumentError):
        DuopolyParams(-1.0, 2.0, 1.0)
    with pytest.raises(ArgumentError):
        PriceHistoryModel(4.0, 0.0, 0.0)
    with pytest.raises(ArgumentError):
        PriceHistoryModel(4.0, 1.0, 1.5)
    with pytest.raises(ArgumentError):
        PriceHistoryModel(4.0, 1.0, 0.0, family="cauchy")
    with pytest.raises(ArgumentError):
        competition.simulate_history(PARAMS, HIST, 2, RngStream(0))


def test_nonpositive_slope():
    with pytest.raises(NonpositiveSlopeError):
        competition.algorithmic_price(10.0, 0.0)
    assert competition.algorithmic_price(6.0, 1.0) == 3.0


def test_lognormal_history_matches_moments():
    hist = PriceHistoryModel(4.0, 1.0, 0.5, family="lognormal")
    own, other = hist.sample(RngStream(4).generator(), 400_000)
    assert own.mean() == pytest.approx(4.0, abs=0.01)
    assert own.var() == pytest.approx(1.0, abs=0.03)
    assert np.corrcoef(own, other)[0, 1] == pytest.approx(0.5, abs=0.01)
    assert (own > 0).all()


def test_replication_row_is_reproducible():
    a = competition.run_replication(PARAMS, HIST, 1000, 3.2, RngStream(9, (1, 2)))
    b = competition.run_replication(PARAMS, HIST, 1000, 3.2, RngStream(9, (1, 2)))
    assert a.as_row() == b.as_row()
    assert set(a.as_row()) >= {"n", "alpha_hat", "beta_hat", "p_a", "degenerate"}


def test_matching_benefit_matches_quadrature():
    p_a = competition.plim_price(PARAMS, HIST)
    competitor = PriceHistoryModel(4.0, 1.0, 0.0)

    def gain(w: float) -> float:
        matched = min(p_a, w)
        r = competition.revenue(PARAMS, matched, w) - competition.revenue(PARAMS, p_a, w)
        return r * stats.norm.pdf(w, 4.0, 1.0)

    exact = integrate.quad(gain, -math.inf, p_a)[0] + integrate.quad(gain, p_a, math.inf)[0]
    est = competition.matching_benefit(PARAMS, p_a, competitor, 200_000, RngStream(5))
    assert est.discrepancy == pytest.approx(0.0, abs=1e-10)
    assert est.direct.contains(exact)
