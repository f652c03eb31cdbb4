"""Duopoly pricing: a monopoly-model OLS pricer, its limit, and the price-matching guardrail."""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional

import numpy as np

from mcp_guardrails import framework
from mcp_guardrails.errors import (
    ArgumentError,
    DegenerateDesignError,
    HypothesisViolatedError,
    NonpositiveSlopeError,
)
from mcp_guardrails.mc_engine import DEFAULT_CONFIDENCE, RngStream
from mcp_guardrails.ols import fit_intercept_slope

logger = logging.getLogger("mcp-guardrails")

# relative slack on the mu >= p_NE hypothesis so that mu = p_NE computed in floating point passes
HYPOTHESIS_RTOL = 1e-12


@dataclass(frozen=True)
class DuopolyParams:
    """Demand ``d = alpha - beta p + gamma p' + eps`` with ``beta > gamma >= 0``."""

    alpha: float
    beta: float
    gamma: float
    noise_sd: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > self.gamma >= 0:
            raise ArgumentError(
                f"need beta > gamma >= 0, got beta={self.beta}, gamma={self.gamma}"
            )
        if not self.noise_sd >= 0:
            raise ArgumentError(f"noise_sd must be nonnegative, got {self.noise_sd}")


class PriceFamily(str, Enum):
    GAUSSIAN = "gaussian"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class PriceHistoryModel:
    """i.i.d. price pairs ``(p, p')`` with common mean, variance and correlation.

    The log-normal family matches the same three moments.
    """

    mu: float
    sigma2: float
    rho: float
    family: PriceFamily = PriceFamily.GAUSSIAN

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", PriceFamily(self.family))
        except ValueError:
            raise ArgumentError(f"unknown price family {self.family!r}") from None
        if not self.sigma2 > 0:
            raise ArgumentError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0.0 <= self.rho <= 1.0:
            raise ArgumentError(f"rho must lie in [0, 1], got {self.rho}")
        if self.family is PriceFamily.LOGNORMAL and not self.mu > 0:
            raise ArgumentError("log-normal prices need a positive mean")

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        z1 = rng.standard_normal(size)
        z2 = rng.standard_normal(size)
        if self.family is PriceFamily.GAUSSIAN:
            sd = math.sqrt(self.sigma2)
            own = self.mu + sd * z1
            other = self.mu + sd * (self.rho * z1 + math.sqrt(1.0 - self.rho**2) * z2)
            return own, other
        s2 = math.log1p(self.sigma2 / self.mu**2)
        m = math.log(self.mu) - s2 / 2.0
        r = math.log1p(self.rho * math.expm1(s2)) / s2
        s = math.sqrt(s2)
        own = np.exp(m + s * z1)
        other = np.exp(m + s * (r * z1 + math.sqrt(max(1.0 - r * r, 0.0)) * z2))
        return own, other


@dataclass(frozen=True)
class PriceHistory:
    prices: np.ndarray
    competitor: np.ndarray
    demand: np.ndarray

    def __len__(self) -> int:
        return len(self.prices)


@dataclass(frozen=True)
class EquilibriumPrices:
    nash: float
    collusive: float


@dataclass(frozen=True)
class RevenueComparison:
    p_matched: float
    revenue_matched: float
    revenue_algorithmic: float

    @property
    def improvement(self) -> float:
        return self.revenue_matched - self.revenue_algorithmic


@dataclass(frozen=True)
class CompetitionOutcome:
    n: int
    alpha_hat: float
    beta_hat: float
    p_a: float
    p_prime: float
    p_matched: float
    revenue_a: float
    revenue_matched: float
    degenerate: bool = False

    def as_row(self) -> dict:
        return asdict(self)


def simulate_history(
    params: DuopolyParams, hist: PriceHistoryModel, n: int, stream: RngStream
) -> PriceHistory:
    if n < 3:
        raise ArgumentError(f"a price history needs n >= 3, got {n}")
    rng = stream.generator()
    prices, competitor = hist.sample(rng, n)
    noise = params.noise_sd * rng.standard_normal(n)
    demand = params.alpha - params.beta * prices + params.gamma * competitor + noise
    return PriceHistory(prices, competitor, demand)


def ols_monopoly_fit(history: PriceHistory) -> tuple[float, float]:
    """Fit ``d = alpha_hat - beta_hat p``, ignoring the competitor's price."""
    return fit_intercept_slope(history.prices, history.demand)


def algorithmic_price(alpha_hat: float, beta_hat: float) -> float:
    if not beta_hat > 0:
        raise NonpositiveSlopeError(
            f"estimated demand slope beta_hat={beta_hat} is not positive; revenue has no maximizer"
        )
    return alpha_hat / (2.0 * beta_hat)


def plim_price(params: DuopolyParams, hist: PriceHistoryModel) -> float:
    """Probability limit of the algorithmic price as the history grows."""
    slope = params.beta - params.gamma * hist.rho
    if not slope > 0:
        raise ArgumentError(f"beta - gamma * rho must be positive, got {slope}")
    intercept = params.alpha + params.gamma * hist.mu * (1.0 - hist.rho)
    return intercept / (2.0 * slope)


def equilibrium_prices(params: DuopolyParams) -> EquilibriumPrices:
    a, b, g = params.alpha, params.beta, params.gamma
    return EquilibriumPrices(nash=a / (2.0 * b - g), collusive=a / (2.0 * (b - g)))


def best_response(params: DuopolyParams, p_prime: float) -> float:
    return (params.alpha + params.gamma * p_prime) / (2.0 * params.beta)


def _check_mean_above_nash(params: DuopolyParams, hist: PriceHistoryModel) -> float:
    nash = equilibrium_prices(params).nash
    if hist.mu < nash - HYPOTHESIS_RTOL * max(1.0, abs(nash)):
        raise HypothesisViolatedError(
            f"the matching threshold needs mu >= p_NE = {nash}, got mu = {hist.mu}"
        )
    return nash


def matching_threshold(params: DuopolyParams, hist: PriceHistoryModel) -> float:
    """Competitor price ``p_L`` above which matching beats the limit algorithmic price.

    Raises:
        HypothesisViolatedError: ``mu < p_NE``.
    """
    _check_mean_above_nash(params, hist)
    a, b, g = params.alpha, params.beta, params.gamma
    rho, mu = hist.rho, hist.mu
    numerator = a * b - 2.0 * a * g * rho - b * g * (1.0 - rho) * mu
    return numerator / (2.0 * (b - rho * g) * (b - g))


def matching_threshold_oracle(params: DuopolyParams, hist: PriceHistoryModel) -> float:
    """Smaller root of ``r(p', p') = r(p_a, p')`` in ``p'``, solved numerically.

    ``p_a`` is the limit algorithmic price; it is always one root of the quadratic.
    """
    _check_mean_above_nash(params, hist)
    a, b, g = params.alpha, params.beta, params.gamma
    p_a = plim_price(params, hist)
    roots = np.roots([b - g, -(a - g * p_a), p_a * (a - b * p_a)])
    real = np.sort(roots[np.abs(roots.imag) <= 1e-9 * max(1.0, p_a)].real)
    if real.size == 0:
        raise ArgumentError("revenue-equality quadratic has no real root")
    return float(real[0])


def is_boundary_threshold(
    params: DuopolyParams, hist: PriceHistoryModel, tol: float = 1e-9
) -> bool:
    """True when ``p_L`` coincides with ``p_NE`` (the matching interval collapses)."""
    nash = equilibrium_prices(params).nash
    return abs(matching_threshold(params, hist) - nash) <= tol * max(1.0, abs(nash))


def revenue(params: DuopolyParams, price, p_prime):
    """Expected revenue ``p (alpha - beta p + gamma p')``; noise is excluded."""
    return price * (params.alpha - params.beta * price + params.gamma * p_prime)


def revenue_compare(params: DuopolyParams, p_a: float, p_prime: float) -> RevenueComparison:
    if not (p_a > 0 and p_prime > 0):
        raise ArgumentError(f"prices must be positive, got p_a={p_a}, p'={p_prime}")
    matched = min(p_a, p_prime)
    return RevenueComparison(
        p_matched=matched,
        revenue_matched=float(revenue(params, matched, p_prime)),
        revenue_algorithmic=float(revenue(params, p_a, p_prime)),
    )


def run_replication(
    params: DuopolyParams,
    hist: PriceHistoryModel,
    n: int,
    p_prime: float,
    stream: RngStream,
) -> CompetitionOutcome:
    """Simulate a history, price with the monopoly fit and match against ``p_prime``.

    A fit with a nonpositive slope (or a singular design) is returned with ``degenerate`` set
    and NaN prices instead of raising.
    """
    history = simulate_history(params, hist, n, stream)
    alpha_hat = beta_hat = math.nan
    try:
        alpha_hat, beta_hat = ols_monopoly_fit(history)
        p_a = algorithmic_price(alpha_hat, beta_hat)
    except (NonpositiveSlopeError, DegenerateDesignError) as exc:
        logger.warning(f"degenerate competition replication {stream.path} (n={n}): {exc}")
        nan = math.nan
        return CompetitionOutcome(
            n, alpha_hat, beta_hat, nan, p_prime, nan, nan, nan, degenerate=True
        )
    comparison = revenue_compare(params, p_a, p_prime)
    return CompetitionOutcome(
        n=n,
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        p_a=p_a,
        p_prime=p_prime,
        p_matched=comparison.p_matched,
        revenue_a=comparison.revenue_algorithmic,
        revenue_matched=comparison.revenue_matched,
    )


def matching_model(
    params: DuopolyParams, p_a: float, competitor: PriceHistoryModel
) -> tuple[framework.JointDecisionModel, framework.LossSpec]:
    """Price matching as a covariate guardrail: ``w`` is the competitor's price and the
    upper bound; the loss is the revenue shortfall against the best response to ``w``."""
    b = params.beta

    def covariate(rng: np.random.Generator, size: int) -> np.ndarray:
        return competitor.sample(rng, size)[1][:, None]

    def bound(rng: np.random.Generator, size: int, w: Optional[np.ndarray]) -> np.ndarray:
        return w[:, 0]

    def shortfall(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return b * (x - best_response(params, np.asarray(w)[:, 0])) ** 2

    loss = framework.LossSpec(
        evaluate_cov=shortfall,
        minimizer=lambda w: best_response(params, np.asarray(w)[:, 0]),
    )
    model = framework.compose_model(
        float(p_a), framework.GuardrailSpec(upper=bound), covariate=covariate
    )
    return model, loss


def matching_benefit(
    params: DuopolyParams,
    p_a: float,
    competitor: PriceHistoryModel,
    n: int,
    stream: RngStream,
    confidence: float = DEFAULT_CONFIDENCE,
    workers: int = 1,
) -> framework.BenefitEstimate:
    """Expected revenue gain of matching a random competitor price, via the framework."""
    model, loss = matching_model(params, p_a, competitor)
    return framework.benefit(
        model, loss, "monte-carlo", n, stream, confidence, workers=workers
    )
