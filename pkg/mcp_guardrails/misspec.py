"""Grid price experiments on a nonlinear demand, a misspecified linear pricer and the
human's empirical-best interval guardrail."""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from mcp_guardrails import framework
from mcp_guardrails.errors import (
    ArgumentError,
    ConditionInapplicableError,
    DegenerateDesignError,
    HypothesisViolatedError,
    NonpositiveSlopeError,
)
from mcp_guardrails.mc_engine import DEFAULT_CONFIDENCE, RngStream, z_value
from mcp_guardrails.ols import fit_intercept_slope

logger = logging.getLogger("mcp-guardrails")


class DemandFamily(str, Enum):
    ISOELASTIC = "isoelastic"
    EXPONENTIAL = "exponential"
    LINEAR = "linear"
    CUSTOM = "custom"


@dataclass(frozen=True)
class DemandOracle:
    """A true demand curve ``f(p)``.

    ``isoelastic``: ``b p^-a`` (a > 1); ``exponential``: ``b exp(-a p)``; ``linear``: ``a - b p``;
    ``custom``: any callable, optimised numerically.
    """

    family: DemandFamily
    a: float = math.nan
    b: float = math.nan
    function: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = ""

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", DemandFamily(self.family))
        except ValueError:
            raise ArgumentError(f"unknown demand family {self.family!r}") from None
        if self.family is DemandFamily.CUSTOM:
            if self.function is None:
                raise ArgumentError("a custom demand oracle needs a function")
            return
        if self.family is DemandFamily.ISOELASTIC and not self.a > 1:
            raise ArgumentError(f"isoelastic demand needs a > 1, got {self.a}")
        if not (self.a > 0 and self.b > 0):
            raise ArgumentError(f"demand parameters must be positive, got a={self.a}, b={self.b}")

    @classmethod
    def isoelastic(cls, a: float, b: float = 1.0) -> "DemandOracle":
        return cls(DemandFamily.ISOELASTIC, a, b)

    @classmethod
    def exponential(cls, a: float, b: float = 1.0) -> "DemandOracle":
        return cls(DemandFamily.EXPONENTIAL, a, b)

    @classmethod
    def linear(cls, intercept: float, slope: float) -> "DemandOracle":
        return cls(DemandFamily.LINEAR, intercept, slope)

    @classmethod
    def custom(cls, function: Callable[[np.ndarray], np.ndarray], name: str = "custom"):
        return cls(DemandFamily.CUSTOM, function=function, name=name)

    def demand(self, p):
        p = np.asarray(p, dtype=float)
        if self.family is DemandFamily.ISOELASTIC:
            return self.b * p ** (-self.a)
        if self.family is DemandFamily.EXPONENTIAL:
            return self.b * np.exp(-self.a * p)
        if self.family is DemandFamily.LINEAR:
            return self.a - self.b * p
        return np.asarray(self.function(p), dtype=float)

    def profit(self, p, c: float):
        return (np.asarray(p, dtype=float) - c) * self.demand(p)

    def optimal_price(self, c: float, p_bar: Optional[float] = None) -> float:
        """Profit-maximizing price; custom oracles are optimised on ``[c, p_bar]``."""
        if self.family is DemandFamily.ISOELASTIC:
            if not c > 0:
                raise ArgumentError("isoelastic demand needs a positive unit cost")
            return self.a * c / (self.a - 1.0)
        if self.family is DemandFamily.EXPONENTIAL:
            return 1.0 / self.a + c
        if self.family is DemandFamily.LINEAR:
            return (self.a / self.b + c) / 2.0
        if p_bar is None:
            raise ArgumentError("a custom oracle needs p_bar to locate its optimum")
        result = optimize.minimize_scalar(
            lambda p: -float(self.profit(p, c)),
            bounds=(c, p_bar),
            method="bounded",
            options={"xatol": 1e-10},
        )
        return float(result.x)

    def is_nonincreasing(self, c: float, p_bar: float, points: int = 1000) -> bool:
        values = self.demand(np.linspace(c, p_bar, points))
        return bool(np.all(np.diff(values) <= 1e-12 * np.maximum(1.0, np.abs(values[:-1]))))


@dataclass(frozen=True)
class GridExperiment:
    """``K`` noisy demand observations at each of ``n + 1`` even grid prices in ``[c, p_bar]``."""

    c: float
    p_bar: float
    n: int
    K: int
    noise_sd: float = 1.0

    def __post_init__(self):
        if not self.c >= 0:
            raise ArgumentError(f"unit cost c must be nonnegative, got {self.c}")
        if not self.p_bar > self.c:
            raise ArgumentError(f"p_bar must exceed c, got p_bar={self.p_bar}, c={self.c}")
        if self.n < 2:
            raise ArgumentError(f"the grid needs n >= 2 intervals, got {self.n}")
        if self.K < 1:
            raise ArgumentError(f"K must be at least 1, got {self.K}")
        if not self.noise_sd >= 0:
            raise ArgumentError(f"noise_sd must be nonnegative, got {self.noise_sd}")

    @property
    def prices(self) -> np.ndarray:
        return np.linspace(self.c, self.p_bar, self.n + 1)

    def interval(self, j_star: int) -> tuple[float, float]:
        """``[p_{j*-1}, p_{j*+1}]`` with indices clamped to the grid ends."""
        if not 0 <= j_star <= self.n:
            raise ArgumentError(f"j_star must lie in [0, {self.n}], got {j_star}")
        prices = self.prices
        return float(prices[max(j_star - 1, 0)]), float(prices[min(j_star + 1, self.n)])


@dataclass(frozen=True)
class MisspecOutcome:
    alpha_hat: float
    beta_hat: float
    p_a: float
    j_star: int
    p_lo: float
    p_hi: float
    p_safeguarded: float
    profit_a: float
    profit_safeguarded: float
    profit_optimal: float
    contains_optimum: bool
    degenerate: bool = False

    def as_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ImprovementCondition:
    family: DemandFamily
    threshold_p_bar: float
    exceeds_threshold: bool
    strict_improvement: bool
    limit_price: float
    interval: tuple[float, float]


@dataclass(frozen=True)
class ConcavityEstimate:
    lam: float
    low: float
    high: float


@dataclass(frozen=True)
class FiniteSampleCheck:
    freq_ai_deviation: float
    freq_human_miss: float
    ai_half_width: float
    human_half_width: float
    bound_ai: float
    bound_human: float
    lam: float
    replications: int
    degenerate: int

    @property
    def human_within_bound(self) -> bool:
        return self.freq_human_miss <= self.bound_human + self.human_half_width


def _check_grid(oracle: DemandOracle, exp: GridExperiment) -> None:
    if oracle.family is DemandFamily.ISOELASTIC and not exp.c > 0:
        raise ArgumentError("isoelastic demand is unbounded at p = 0; use a positive unit cost")


def run_grid_experiment(
    oracle: DemandOracle, exp: GridExperiment, stream: RngStream
) -> np.ndarray:
    """Observation matrix of shape ``(n + 1, K)``; noise is Gaussian and never truncated."""
    _check_grid(oracle, exp)
    rng = stream.generator()
    truth = oracle.demand(exp.prices)
    return truth[:, None] + exp.noise_sd * rng.standard_normal((exp.n + 1, exp.K))


def _check_shape(observations: np.ndarray, exp: GridExperiment) -> np.ndarray:
    observations = np.asarray(observations, dtype=float)
    if observations.ndim != 2 or observations.shape[0] != exp.n + 1:
        raise ArgumentError(
            f"observations must have {exp.n + 1} rows, got shape {observations.shape}"
        )
    return observations


def ols_linear_fit(observations: np.ndarray, exp: GridExperiment) -> tuple[float, float]:
    """Fit ``alpha - beta p`` to every observation.

    With the same ``K`` at every price the fit on row means has the same minimizer.
    """
    observations = _check_shape(observations, exp)
    return fit_intercept_slope(exp.prices, observations.mean(axis=1))


def algorithmic_price_misspec(alpha_hat: float, beta_hat: float, c: float) -> float:
    if not beta_hat > 0:
        raise NonpositiveSlopeError(
            f"fitted demand slope beta_hat={beta_hat} is not positive; profit has no maximizer"
        )
    return alpha_hat / (2.0 * beta_hat) + c / 2.0


def _grid_moments(oracle: DemandOracle, exp: GridExperiment) -> tuple[float, float]:
    prices = exp.prices
    demand = oracle.demand(prices)
    return float(demand.mean()), float((prices * demand).mean())


def limit_algorithmic_price(oracle: DemandOracle, exp: GridExperiment) -> float:
    """Algorithmic price in the limit of infinitely many observations per grid price."""
    _check_grid(oracle, exp)
    c, p_bar, n = exp.c, exp.p_bar, exp.n
    c1, c2 = _grid_moments(oracle, exp)
    second = c * p_bar + (2 * n + 1) / (6.0 * n) * (p_bar - c) ** 2
    denominator = (p_bar + c) * c1 - 2.0 * c2
    if denominator == 0.0:
        raise DegenerateDesignError("limit fit is flat: (p_bar + c) c1 - 2 c2 vanishes")
    numerator = second * c1 - (p_bar + c) / 2.0 * c2
    return numerator / denominator + c / 2.0


def human_best_index(observations: np.ndarray, exp: GridExperiment) -> int:
    """Grid index with the highest empirical profit; ties go to the smallest index."""
    observations = _check_shape(observations, exp)
    profits = (exp.prices - exp.c) * observations.mean(axis=1)
    return int(np.argmax(profits))


def safeguarded_price_misspec(p_a: float, j_star: int, exp: GridExperiment) -> float:
    lo, hi = exp.interval(j_star)
    return framework.clip(p_a, lo, hi)


def noiseless_interval(oracle: DemandOracle, exp: GridExperiment) -> tuple[float, float]:
    truth = oracle.demand(exp.prices)[:, None]
    return exp.interval(human_best_index(truth, exp))


def improvement_condition(oracle: DemandOracle, exp: GridExperiment) -> ImprovementCondition:
    """Closed-form ``p_bar`` threshold beyond which the guardrail strictly improves the limit price.

    ``strict_improvement`` is decided exactly: the limit algorithmic price lies outside the
    noiseless-grid interval.

    Raises:
        ConditionInapplicableError: ``n <= 6`` or a family without a closed form.
    """
    n, c, a = exp.n, exp.c, oracle.a
    scale = 1.0 / 3.0 - 2.0 / n
    if not scale > 0:
        raise ConditionInapplicableError(f"the improvement threshold needs n > 6, got n={n}")
    if oracle.family is DemandFamily.ISOELASTIC:
        threshold = c * (a / (a - 1.0) - 0.5 - 2.0 / n) / scale
    elif oracle.family is DemandFamily.EXPONENTIAL:
        threshold = (1.0 / a + (0.5 - 2.0 / n) * c) / scale
    else:
        raise ConditionInapplicableError(
            f"no closed-form improvement threshold for {oracle.family.value} demand"
        )
    limit = limit_algorithmic_price(oracle, exp)
    lo, hi = noiseless_interval(oracle, exp)
    return ImprovementCondition(
        family=oracle.family,
        threshold_p_bar=threshold,
        exceeds_threshold=exp.p_bar > threshold,
        strict_improvement=not lo <= limit <= hi,
        limit_price=limit,
        interval=(lo, hi),
    )


def estimate_concavity(
    oracle: DemandOracle, exp: GridExperiment, points: int = 1000, strict: bool = False
) -> ConcavityEstimate:
    """Strong-concavity parameter of the profit: minimum of minus its second difference.

    ``strict`` requires concavity on all of ``[c, p_bar]``; otherwise the estimate is taken on
    the largest grid neighbourhood of the maximizer where the profit is concave.
    """
    grid = np.linspace(exp.c, exp.p_bar, points)
    h = grid[1] - grid[0]
    profit = oracle.profit(grid, exp.c)
    curvature = -(profit[2:] - 2.0 * profit[1:-1] + profit[:-2]) / h**2
    inner = grid[1:-1]
    if strict:
        lam = float(curvature.min())
        if not lam > 0:
            raise HypothesisViolatedError(
                f"profit is not strongly concave on [{exp.c}, {exp.p_bar}] (lambda = {lam:.4g})"
            )
        return ConcavityEstimate(lam, float(grid[0]), float(grid[-1]))
    peak = int(np.clip(np.argmax(profit) - 1, 0, len(curvature) - 1))
    if not curvature[peak] > 0:
        raise HypothesisViolatedError("profit is not concave around its grid maximizer")
    left = peak
    while left > 0 and curvature[left - 1] > 0:
        left -= 1
    right = peak
    while right < len(curvature) - 1 and curvature[right + 1] > 0:
        right += 1
    lam = float(curvature[left : right + 1].min())
    if left > 0 or right < len(curvature) - 1:
        logger.info(
            f"profit is concave only on [{inner[left]:.4g}, {inner[right]:.4g}]; "
            "lambda estimated there"
        )
    return ConcavityEstimate(lam, float(inner[left]), float(inner[right]))


def human_miss_bound(exp: GridExperiment, lam: float) -> float:
    """Upper bound on P(p* outside the human interval)."""
    if exp.noise_sd == 0:
        return 0.0
    exponent = exp.K * lam**2 * (exp.p_bar - exp.c) ** 4 / (
        32.0 * exp.noise_sd**2 * exp.p_bar**2 * exp.n**4
    )
    return 2.0 * (exp.n + 1) * math.exp(-exponent)


def ai_deviation_bound(oracle: DemandOracle, exp: GridExperiment, delta: float) -> float:
    """Illustrative bound on P(|p_a - p_a*| >= delta) from concentration of the two grid moments.

    The delta1 and delta2 scalings are one admissible choice of constants, not a proven bound;
    only the exponential decay in ``n * K`` is meaningful, so callers report it unchecked.
    NaN when the moments are not positive, where the bound does not apply.
    """
    if exp.noise_sd == 0:
        return 0.0
    c, p_bar, n, K, s2 = exp.c, exp.p_bar, exp.n, exp.K, exp.noise_sd**2
    c1, c2 = _grid_moments(oracle, exp)
    if not (c1 > 0 and c2 > 0):
        return math.nan
    gap = ((p_bar + c) * c1 / 2.0 - c2) ** 2
    spread = (0.5 + 1.0 / n) * (p_bar - c) ** 2
    delta1 = 3.0 * gap / (c2 * spread) * delta
    delta2 = 6.0 * gap / ((p_bar + c) * c1 * spread) * delta
    return 2.0 * math.exp(-(delta1**2) * (n + 1) * K / (2.0 * s2)) + 2.0 * math.exp(
        -(delta2**2) * (n + 1) * K / (4.0 * s2)
    )


def run_replication(oracle: DemandOracle, exp: GridExperiment, stream: RngStream) -> MisspecOutcome:
    observations = run_grid_experiment(oracle, exp, stream)
    j_star = human_best_index(observations, exp)
    lo, hi = exp.interval(j_star)
    p_star = oracle.optimal_price(exp.c, exp.p_bar)
    profit_optimal = float(oracle.profit(p_star, exp.c))
    contains = lo <= p_star <= hi
    alpha_hat, beta_hat = ols_linear_fit(observations, exp)
    try:
        p_a = algorithmic_price_misspec(alpha_hat, beta_hat, exp.c)
    except NonpositiveSlopeError as exc:
        logger.warning(f"degenerate misspecification replication {stream.path}: {exc}")
        nan = math.nan
        return MisspecOutcome(
            alpha_hat, beta_hat, nan, j_star, lo, hi, nan, nan, nan, profit_optimal, contains,
            degenerate=True,
        )
    p_hat = safeguarded_price_misspec(p_a, j_star, exp)
    return MisspecOutcome(
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        p_a=p_a,
        j_star=j_star,
        p_lo=lo,
        p_hi=hi,
        p_safeguarded=p_hat,
        profit_a=float(oracle.profit(p_a, exp.c)),
        profit_safeguarded=float(oracle.profit(p_hat, exp.c)),
        profit_optimal=profit_optimal,
        contains_optimum=contains,
    )


def _frequency_half_width(freq: float, count: int, confidence: float) -> float:
    return z_value(confidence) * math.sqrt(freq * (1.0 - freq) / count) if count else math.nan


def finite_sample_check(
    oracle: DemandOracle,
    exp: GridExperiment,
    delta: float,
    replications: int,
    stream: RngStream,
    lam: Optional[float] = None,
    confidence: float = DEFAULT_CONFIDENCE,
) -> FiniteSampleCheck:
    """Empirical deviation and miss frequencies next to their exponential bounds.

    Replication ``r`` draws from ``stream.child(r)``; degenerate fits count as deviations.

    Raises:
        HypothesisViolatedError: the profit is not concave (estimated ``lambda <= 0``).
    """
    if replications < 1:
        raise ArgumentError("replications must be ≥ 1")
    if not delta > 0:
        raise ArgumentError(f"delta must be positive, got {delta}")
    if lam is None:
        lam = estimate_concavity(oracle, exp).lam
    elif not lam > 0:
        raise HypothesisViolatedError(f"lambda must be positive, got {lam}")
    target = limit_algorithmic_price(oracle, exp)
    deviations = misses = degenerate = 0
    for r in range(replications):
        outcome = run_replication(oracle, exp, stream.child(r))
        degenerate += outcome.degenerate
        deviations += outcome.degenerate or abs(outcome.p_a - target) >= delta
        misses += not outcome.contains_optimum
    freq_ai = deviations / replications
    freq_human = misses / replications
    return FiniteSampleCheck(
        freq_ai_deviation=freq_ai,
        freq_human_miss=freq_human,
        ai_half_width=_frequency_half_width(freq_ai, replications, confidence),
        human_half_width=_frequency_half_width(freq_human, replications, confidence),
        bound_ai=ai_deviation_bound(oracle, exp, delta),
        bound_human=human_miss_bound(exp, lam),
        lam=lam,
        replications=replications,
        degenerate=degenerate,
    )


def figure_series(
    oracle: DemandOracle, exp: GridExperiment, observations: np.ndarray
) -> list[dict]:
    """Plot-ready rows: observed and fitted demand and profit at every grid price."""
    observations = _check_shape(observations, exp)
    alpha_hat, beta_hat = ols_linear_fit(observations, exp)
    prices = exp.prices
    mean_demand = observations.mean(axis=1)
    rows = []
    for j, p in enumerate(prices):
        rows.append(
            {
                "price": float(p),
                "observed_demand": float(mean_demand[j]),
                "fitted_demand": alpha_hat - beta_hat * float(p),
                "true_demand": float(oracle.demand(p)),
                "empirical_profit": float((p - exp.c) * mean_demand[j]),
                "true_profit": float(oracle.profit(p, exp.c)),
            }
        )
    return rows
