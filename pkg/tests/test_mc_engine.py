import math
import unittest
from unittest.mock import patch

import numpy as np
import pytest
from scipy import stats

from mcp_guardrails.errors import ArgumentError, ConvergenceError, DomainError
from mcp_guardrails import mc_engine
from mcp_guardrails.mc_engine import (
    EstimateWithCI,
    EstimationMethod,
    RngStream,
    SampleMoments,
    accumulate_moments,
    chunk_sizes,
    estimate_mean,
    quadrature_1d,
    quadrature_2d,
    z_value,
)


class TestRngStream(unittest.TestCase):
    def test_same_path_same_draws(self):
        a = RngStream(42, (1, 2)).generator().standard_normal(100)
        b = RngStream(42, (1, 2)).generator().standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_child_extends_path(self):
        self.assertEqual(RngStream(7, (1,)).child(2, 3), RngStream(7, (1, 2, 3)))

    def test_distinct_paths_uncorrelated(self):
        a = RngStream(42, (0,)).generator().standard_normal(100_000)
        b = RngStream(42, (1,)).generator().standard_normal(100_000)
        # 5 standard errors of a zero correlation
        self.assertLess(abs(np.corrcoef(a, b)[0, 1]), 5 / math.sqrt(100_000))

    def test_distinct_roots_differ(self):
        a = RngStream(1).generator().random(10)
        b = RngStream(2).generator().random(10)
        self.assertFalse(np.array_equal(a, b))

    def test_rejects_bad_seed(self):
        with self.assertRaises(ArgumentError):
            RngStream(-1)
        with self.assertRaises(ArgumentError):
            RngStream(2**64)
        with self.assertRaises(ArgumentError):
            RngStream(0, (-1,))


class TestEstimateMean(unittest.TestCase):
    def test_constant_sampler(self):
        est = estimate_mean(lambda rng, size: np.full(size, 3.0), 100, RngStream(0))
        self.assertEqual(est.mean, 3.0)
        self.assertEqual(est.half_width, 0.0)
        self.assertEqual(est.n_samples, 100)

    def test_standard_normal(self):
        est = estimate_mean(lambda rng, size: rng.standard_normal(size), 10**6, RngStream(1))
        self.assertLessEqual(abs(est.mean), 4e-3)
        self.assertTrue(est.contains(0.0))

    def test_uniform(self):
        est = estimate_mean(lambda rng, size: rng.random(size), 10**6, RngStream(2))
        self.assertTrue(est.contains(0.5))

    def test_thread_count_does_not_change_result(self):
        sampler = lambda rng, size: rng.exponential(size=size)  # noqa: E731
        one = estimate_mean(sampler, 50_000, RngStream(3), chunk_size=1000, workers=1)
        four = estimate_mean(sampler, 50_000, RngStream(3), chunk_size=1000, workers=4)
        self.assertEqual(one, four)

    def test_needs_two_samples(self):
        with self.assertRaises(ArgumentError):
            estimate_mean(lambda rng, size: rng.random(size), 1, RngStream(0))

    def test_non_finite_sample(self):
        with self.assertRaises(DomainError):
            estimate_mean(lambda rng, size: np.full(size, np.inf), 10, RngStream(0))


def test_chunk_sizes():
    assert chunk_sizes(10, 4) == [4, 4, 2]
    assert chunk_sizes(8, 4) == [4, 4]
    with pytest.raises(ArgumentError):
        chunk_sizes(10, 0)


def test_merged_moments_match_direct():
    data = RngStream(5).generator().standard_normal((1000, 2))
    merged = SampleMoments.from_block(data[:300]).merge(SampleMoments.from_block(data[300:]))
    np.testing.assert_allclose(merged.mean, data.mean(axis=0))
    np.testing.assert_allclose(merged.covariance, np.cov(data, rowvar=False))


def test_vector_moments_delta_method():
    moments = accumulate_moments(
        lambda rng, size: np.column_stack([rng.random(size), rng.random(size)]),
        20_000,
        RngStream(6),
    )
    diff = moments.estimate_linear([1.0, -1.0])
    assert diff.contains(0.0)
    assert diff.half_width > 0


def test_z_value():
    assert z_value(0.95) == pytest.approx(stats.norm.ppf(0.975))
    with pytest.raises(ArgumentError):
        z_value(1.0)


def test_estimate_with_ci_helpers():
    a = EstimateWithCI(1.0, 0.5, 10)
    b = EstimateWithCI(2.2, 0.5, 10)
    assert not a.agrees_with(b)
    assert a.agrees_with(b, slack=0.2)
    assert EstimateWithCI.exact(2.0).method is EstimationMethod.EXACT
    assert a.as_dict()["method"] == "monte-carlo"
    with pytest.raises(ArgumentError):
        EstimateWithCI(0.0, -1.0, 1)


class TestQuadrature(unittest.TestCase):
    def test_linear(self):
        est = quadrature_1d(lambda x: x, 0.0, 1.0)
        self.assertAlmostEqual(est.mean, 0.5, delta=1e-8)
        self.assertIs(est.method, EstimationMethod.QUADRATURE)

    def test_gaussian_variance(self):
        est = quadrature_1d(lambda x: x * x * stats.norm.pdf(x), -math.inf, math.inf)
        self.assertAlmostEqual(est.mean, 1.0, delta=1e-8)

    def test_heavy_tail_loss_mass(self):
        eps, xstar = 0.5, 2.0
        est = quadrature_1d(
            lambda x: 3 * eps / (x - xstar) ** 4 * (x - xstar) ** 2, -math.inf, xstar - 1
        )
        self.assertAlmostEqual(est.mean, 3 * eps, delta=1e-7)

    def test_reversed_bounds(self):
        self.assertAlmostEqual(quadrature_1d(lambda x: x, 1.0, 0.0).mean, -0.5, delta=1e-8)

    def test_break_points(self):
        est = quadrature_1d(lambda x: 1.0 if x < 0.3 else 0.0, 0.0, 1.0, points=[0.3])
        self.assertAlmostEqual(est.mean, 0.3, delta=1e-8)

    def test_convergence_error_carries_partial(self):
        with self.assertRaises(ConvergenceError) as ctx:
            quadrature_1d(lambda x: 1.0 / abs(x - 0.5), 0.0, 1.0, limit=5)
        self.assertIsNotNone(ctx.exception.partial)

    def test_unit_square(self):
        est = quadrature_2d(lambda x, y: 1.0, (0.0, 1.0), (0.0, 1.0))
        self.assertAlmostEqual(est.mean, 1.0, delta=1e-8)

    def test_independent_normals_product(self):
        est = quadrature_2d(
            lambda x, y: x * y * stats.norm.pdf(x) * stats.norm.pdf(y),
            (-math.inf, math.inf),
            (-math.inf, math.inf),
        )
        self.assertAlmostEqual(est.mean, 0.0, delta=1e-7)

    def test_flagged_piece_above_tolerance_raises(self):
        # two subdivisions cannot resolve the oscillation to 1e-8
        with self.assertRaises(ConvergenceError) as ctx:
            quadrature_1d(lambda x: math.sin(30 * x), 0.0, 1.0, tol=1e-8, limit=2)
        self.assertGreater(ctx.exception.partial.half_width, 1e-8)

    def test_enough_subdivisions_meet_tolerance(self):
        est = quadrature_1d(lambda x: math.sin(30 * x), 0.0, 1.0, tol=1e-8)
        self.assertAlmostEqual(est.mean, (1 - math.cos(30.0)) / 30, delta=1e-8)
        self.assertLessEqual(est.half_width, 1e-8)


class TestQuadrature2dSpreadFallback(unittest.TestCase):
    """The inner error spread integral fails; the bound must still cover the outer range."""

    INNER_ERROR = 1e-3

    def _integrate(self, outer):
        real = mc_engine.quadrature_1d

        def fake(f, a, b, tol=1e-8, points=(), limit=mc_engine.MAX_SUBDIVISIONS):
            if (a, b) == (0.0, 1.0):
                return EstimateWithCI(f(0.0), self.INNER_ERROR, 1, EstimationMethod.QUADRATURE)
            if tol == 1e-6:
                raise ConvergenceError("spread did not converge")
            return real(f, a, b, tol, points, limit)

        with patch.object(mc_engine, "quadrature_1d", side_effect=fake):
            return quadrature_2d(lambda x, y: math.exp(-x), outer, (0.0, 1.0), tol=1e-8)

    def test_finite_outer_scales_by_length(self):
        est = self._integrate((0.0, 10.0))
        self.assertAlmostEqual(est.mean, 1 - math.exp(-10.0), delta=1e-8)
        self.assertGreaterEqual(est.half_width, 10 * self.INNER_ERROR)
        self.assertAlmostEqual(est.half_width, 10 * self.INNER_ERROR, delta=1e-8)

    def test_infinite_outer_has_no_finite_bound(self):
        est = self._integrate((0.0, math.inf))
        self.assertAlmostEqual(est.mean, 1.0, delta=1e-8)
        self.assertEqual(est.half_width, math.inf)
