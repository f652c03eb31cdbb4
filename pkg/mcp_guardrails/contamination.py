"""OLS prediction on contaminated data: biased limits and the guardrails that undo them.

Two settings. Response contamination adds ``B`` to the regression response, which biases
every prediction by ``E[B]``. Covariate contamination observes ``W = Z + U`` instead of the
true covariate ``Z``, which attenuates the fitted coefficients unless ``Sigma2 @ beta = 0``.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from mcp_guardrails import framework
from mcp_guardrails.domains import Domain
from mcp_guardrails.errors import (
    ArgumentError,
    ConfigurationError,
    DegenerateDesignError,
    HypothesisViolatedError,
    InvalidGuardrailError,
)
from mcp_guardrails.mc_engine import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CONFIDENCE,
    EstimateWithCI,
    RngStream,
    accumulate_moments,
    estimate_mean,
    z_value,
)
from mcp_guardrails.ols import fit_ols

logger = logging.getLogger("mcp-guardrails")

INF = math.inf

# eigenvalue and null-space tolerances for second-moment matrices
MATRIX_TOL = 1e-9

VectorSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class BoundedLinearModel:
    """``X = w @ beta + eps`` on a bounded domain; with ``intercept`` beta[0] multiplies a 1."""

    beta: tuple[float, ...]
    domain: Domain
    noise_sd: float = 1.0
    intercept: bool = False

    def __post_init__(self):
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        expected = self.domain.dimension + (1 if self.intercept else 0)
        if len(beta) != expected:
            raise ArgumentError(f"beta has {len(beta)} entries, the domain needs {expected}")
        if not self.noise_sd >= 0:
            raise ArgumentError(f"noise_sd must be nonnegative, got {self.noise_sd}")
        object.__setattr__(self, "beta", beta)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array(self.beta)

    def features(self, w) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if self.intercept:
            return np.column_stack((np.ones(len(w)), w))
        return w

    def mean_response(self, w) -> np.ndarray:
        return self.features(w) @ self.coefficients

    def extremes(self) -> tuple[float, float]:
        """Exact ``(min, max)`` of the mean response over the domain."""
        beta = self.coefficients
        if self.intercept:
            low, high = self.domain.extremes(beta[1:])
            return low + beta[0], high + beta[0]
        return self.domain.extremes(beta)


@dataclass(frozen=True)
class ResponseContamination:
    """Contamination ``B`` of the response.

    Two-point by default (``magnitude`` with probability ``propensity``, else 0); a general
    ``sampler`` may replace it, with ``mean`` its known expectation (estimated when omitted).
    """

    magnitude: float = 0.0
    propensity: float = 0.0
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    mean: Optional[float] = None

    def __post_init__(self):
        if self.sampler is None and not 0.0 <= self.propensity <= 1.0:
            raise ArgumentError(f"propensity must lie in [0, 1], got {self.propensity}")

    @property
    def two_point(self) -> bool:
        return self.sampler is None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, size), dtype=float)
        return np.where(rng.random(size) < self.propensity, self.magnitude, 0.0)

    def expectation(self, stream: Optional[RngStream] = None, n: int = 1_000_000) -> float:
        if self.two_point:
            return self.propensity * self.magnitude
        if self.mean is not None:
            return float(self.mean)
        if stream is None:
            raise ConfigurationError("a general contamination without a mean needs a stream")
        return estimate_mean(self.sample, n, stream).mean


@dataclass(frozen=True)
class RegressionDataset:
    covariates: np.ndarray
    response: np.ndarray
    intercept: bool = False

    def design(self) -> np.ndarray:
        if self.intercept:
            return np.column_stack((np.ones(len(self.covariates)), self.covariates))
        return self.covariates

    def fit(self) -> np.ndarray:
        return fit_ols(self.design(), self.response)


@dataclass(frozen=True)
class ResponsePlim:
    bias: float
    loss: float


@dataclass(frozen=True)
class GuardrailVerdict:
    holds: bool
    lower: float
    upper: float
    lower_threshold: float
    upper_threshold: float
    two_sided: bool


@dataclass(frozen=True)
class CovariatePlim:
    coefficients: np.ndarray
    consistent: bool


@dataclass(frozen=True)
class TailCertificate:
    upper_frequency: float
    lower_frequency: float
    half_width: float
    certified: bool


@dataclass(frozen=True)
class CovariateVerdict:
    holds: bool
    lower_threshold: float
    upper_threshold: float
    slack: float
    certificate: TailCertificate


@dataclass(frozen=True)
class LossRow:
    point: tuple[float, ...]
    loss_algorithmic: float
    loss_safeguarded: float

    @property
    def worsened(self) -> bool:
        return self.loss_safeguarded > self.loss_algorithmic


@dataclass(frozen=True)
class CovariateLossComparison:
    loss_algorithmic: EstimateWithCI
    loss_safeguarded: EstimateWithCI
    difference: EstimateWithCI

    @property
    def separated_violation(self) -> bool:
        """Safeguarded loss exceeds the algorithmic loss with CI separation."""
        return self.difference.upper < 0


# --------------------------------------------------------------------------- response


def simulate_response_contaminated(
    model: BoundedLinearModel, cont: ResponseContamination, n: int, stream: RngStream
) -> RegressionDataset:
    """``X_i = w_i @ beta + B_i + eps_i`` with ``w_i`` uniform on the domain."""
    if n < len(model.beta) + 1:
        raise ArgumentError(f"need n >= {len(model.beta) + 1} observations, got {n}")
    rng = stream.generator()
    raw = model.domain.sample(rng, n)
    contamination = cont.sample(rng, n)
    noise = model.noise_sd * rng.standard_normal(n)
    response = model.mean_response(raw) + contamination + noise
    return RegressionDataset(raw, response, model.intercept)


def ols_predict(dataset: RegressionDataset, w) -> Union[float, np.ndarray]:
    """``w @ beta_hat`` for one covariate vector (a float) or a matrix of rows (an array)."""
    beta_hat = dataset.fit()
    rows = np.atleast_2d(np.asarray(w, dtype=float))
    if dataset.intercept:
        rows = np.column_stack((np.ones(len(rows)), rows))
    predictions = rows @ beta_hat
    if np.ndim(w) <= 1:
        return float(predictions[0])
    return predictions


def response_plim(
    model: BoundedLinearModel,
    cont: ResponseContamination,
    stream: Optional[RngStream] = None,
) -> ResponsePlim:
    """Large-sample prediction bias ``E[B]`` (the same at every ``w``) and its loss ``E[B]^2``.

    The fitted model needs an intercept or a constant covariate for the bias to be uniform.
    """
    bias = cont.expectation(stream)
    return ResponsePlim(bias=bias, loss=bias**2)


def response_guardrail_condition(
    model: BoundedLinearModel,
    cont: ResponseContamination,
    upper: float = INF,
    lower: Optional[float] = None,
    stream: Optional[RngStream] = None,
) -> GuardrailVerdict:
    """Do the bounds leave every large-sample prediction no worse off?

    With only an upper bound the condition is ``upper >= max(w @ beta) - E[B]``; with both it is
    ``upper >= max - |E[B]|`` and ``lower <= min + |E[B]|``.
    """
    low = -INF if lower is None else float(lower)
    upper = float(upper)
    if low > upper:
        raise InvalidGuardrailError(f"lower bound {low} exceeds upper bound {upper}")
    bias = cont.expectation(stream)
    w_min, w_max = model.extremes()
    if lower is None:
        upper_threshold, lower_threshold = w_max - bias, -INF
    else:
        upper_threshold, lower_threshold = w_max - abs(bias), w_min + abs(bias)
    holds = upper >= upper_threshold and low <= lower_threshold
    return GuardrailVerdict(holds, low, upper, lower_threshold, upper_threshold, lower is not None)


def _default_grid(domain: Domain, points: int = 100) -> np.ndarray:
    free = sum(1 for lo, hi in zip(*_corners(domain)) if hi > lo)
    per_axis = max(2, int(round(points ** (1.0 / max(free, 1)))))
    return domain.grid(per_axis)


def _corners(domain: Domain) -> tuple[Sequence[float], Sequence[float]]:
    vertices = domain.vertices()
    return vertices.min(axis=0), vertices.max(axis=0)


def max_prediction_bias(
    dataset: RegressionDataset,
    model: BoundedLinearModel,
    bias: float,
    grid: Optional[np.ndarray] = None,
) -> float:
    """``sup_w |ols_predict(w) - (w @ beta + bias)|`` over a grid of the domain."""
    grid = _default_grid(model.domain) if grid is None else np.atleast_2d(grid)
    predictions = ols_predict(dataset, grid)
    return float(np.max(np.abs(predictions - model.mean_response(grid) - bias)))


def mse_compare_response(
    model: BoundedLinearModel,
    cont: ResponseContamination,
    lower: float = -INF,
    upper: float = INF,
    grid: Optional[np.ndarray] = None,
    beta_hat: Optional[Sequence[float]] = None,
    stream: Optional[RngStream] = None,
) -> list[LossRow]:
    """Pointwise squared error of the algorithmic and clipped predictions over a grid.

    Predictions are the large-sample ``w @ beta + E[B]`` unless ``beta_hat`` is given.
    """
    grid = _default_grid(model.domain) if grid is None else np.atleast_2d(grid)
    truth = model.mean_response(grid)
    if beta_hat is None:
        predictions = truth + cont.expectation(stream)
    else:
        predictions = model.features(grid) @ np.asarray(beta_hat, dtype=float)
    clipped = framework.clip(predictions, lower, upper)
    return [
        LossRow(tuple(float(v) for v in point), float(a), float(s))
        for point, a, s in zip(grid, (predictions - truth) ** 2, (clipped - truth) ** 2)
    ]


# --------------------------------------------------------------------------- covariates


@dataclass(frozen=True)
class CovariateContamination:
    """Observed covariate ``W = Z + U`` with ``U`` independent of ``Z``.

    ``error`` contaminates the training data; ``deployment_error`` contaminates the covariate
    the fitted model is applied to and defaults to ``error``. ``sigma1``/``sigma2`` are the
    second-moment matrices of ``Z`` and ``U``, estimated from the samplers when omitted.
    """

    true_covariate: VectorSampler
    error: VectorSampler
    domain: Optional[Domain] = None
    sigma1: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    deployment_error: Optional[VectorSampler] = None

    @classmethod
    def on_domain(
        cls,
        domain: Domain,
        error: VectorSampler,
        deployment_error: Optional[VectorSampler] = None,
        sigma2: Optional[np.ndarray] = None,
    ) -> "CovariateContamination":
        """``Z`` uniform on ``domain``."""
        return cls(domain.sample, error, domain, None, sigma2, deployment_error)

    @property
    def deployment(self) -> VectorSampler:
        return self.deployment_error or self.error

    def second_moments(
        self, stream: Optional[RngStream] = None, n: int = 1_000_000
    ) -> tuple[np.ndarray, np.ndarray]:
        if self.sigma1 is not None and self.sigma2 is not None:
            sigma1 = np.atleast_2d(self.sigma1).astype(float)
            return sigma1, np.atleast_2d(self.sigma2).astype(float)
        if stream is None:
            raise ConfigurationError(
                "second-moment matrices must be given or estimated from a stream"
            )
        rng = stream.generator()
        z = np.asarray(self.true_covariate(rng, n), dtype=float).reshape(n, -1)
        u = np.asarray(self.error(rng, n), dtype=float).reshape(n, -1)
        sigma1 = z.T @ z / n if self.sigma1 is None else np.atleast_2d(self.sigma1)
        sigma2 = u.T @ u / n if self.sigma2 is None else np.atleast_2d(self.sigma2)
        return np.asarray(sigma1, dtype=float), np.asarray(sigma2, dtype=float)


def box_second_moment(domain: Domain) -> np.ndarray:
    """Exact ``E[Z Z^T]`` for ``Z`` uniform on a box (independent coordinates)."""
    low, high = (np.asarray(v, dtype=float) for v in _corners(domain))
    mean = (low + high) / 2.0
    moment = np.outer(mean, mean)
    np.fill_diagonal(moment, (low**2 + low * high + high**2) / 3.0)
    return moment


def gaussian_vector(cov: np.ndarray) -> VectorSampler:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))

    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.multivariate_normal(np.zeros(len(cov)), cov, size=size, method="eigh")

    return draw


def symmetric_two_point(direction: Sequence[float], prob: float) -> VectorSampler:
    """``+direction`` and ``-direction`` with probability ``prob`` each, otherwise zero."""
    direction = np.asarray(direction, dtype=float)
    if not 0.0 <= prob <= 0.5:
        raise ArgumentError(f"prob must lie in [0, 1/2], got {prob}")

    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        sign = np.where(u < prob, 1.0, np.where(u < 2.0 * prob, -1.0, 0.0))
        return sign[:, None] * direction[None, :]

    return draw


def zero_vector(dimension: int) -> VectorSampler:
    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.zeros((size, dimension))

    return draw


def _validate_moments(sigma1: np.ndarray, sigma2: np.ndarray) -> None:
    if sigma1.shape != sigma2.shape or sigma1.shape[0] != sigma1.shape[1]:
        raise ArgumentError(f"second-moment shapes differ: {sigma1.shape} vs {sigma2.shape}")
    scale = max(1.0, float(np.abs(sigma1).max()))
    if np.linalg.eigvalsh(sigma1).min() <= MATRIX_TOL * scale:
        raise ArgumentError("Sigma1 must be positive definite")
    if np.linalg.eigvalsh(sigma2).min() < -MATRIX_TOL * scale:
        raise ArgumentError("Sigma2 must be positive semi-definite")


def covariate_plim(
    cont: CovariateContamination,
    beta: Sequence[float],
    stream: Optional[RngStream] = None,
    n: int = 1_000_000,
) -> CovariatePlim:
    """Large-sample OLS coefficients ``(I - (Sigma1 + Sigma2)^-1 Sigma2) beta``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    sigma1, sigma2 = cont.second_moments(stream, n)
    _validate_moments(sigma1, sigma2)
    total = sigma1 + sigma2
    if np.linalg.matrix_rank(total) < len(total):
        raise DegenerateDesignError("Sigma1 + Sigma2 is singular")
    limit = beta - np.linalg.solve(total, sigma2 @ beta)
    consistent = bool(np.linalg.norm(sigma2 @ beta) <= MATRIX_TOL * max(1.0, np.linalg.norm(beta)))
    return CovariatePlim(limit, consistent)


def simulate_covariate_contaminated(
    cont: CovariateContamination,
    beta: Sequence[float],
    n: int,
    noise_sd: float,
    stream: RngStream,
) -> RegressionDataset:
    """Responses from the true ``Z``; the dataset records the observed ``W = Z + U``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if n < beta.size + 1:
        raise ArgumentError(f"need n >= {beta.size + 1} observations, got {n}")
    rng = stream.generator()
    z = np.asarray(cont.true_covariate(rng, n), dtype=float).reshape(n, -1)
    u = np.asarray(cont.error(rng, n), dtype=float).reshape(n, -1)
    response = z @ beta + noise_sd * rng.standard_normal(n)
    return RegressionDataset(z + u, response)


def certify_tails(
    cont: CovariateContamination,
    beta: Sequence[float],
    b: float,
    p: float,
    stream: RngStream,
    n: int = 200_000,
    confidence: float = DEFAULT_CONFIDENCE,
) -> TailCertificate:
    """Empirical ``P(U @ beta >= b)`` and ``P(U @ beta <= -b)`` for the deployment error.

    Certified when both reach ``p`` within the binomial CI.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    draws = np.asarray(cont.deployment(stream.generator(), n), dtype=float)
    projected = draws.reshape(n, -1) @ beta
    up = float(np.mean(projected >= b))
    down = float(np.mean(projected <= -b))
    half_width = z_value(confidence) * math.sqrt(max(p * (1.0 - p), 1e-12) / n)
    certified = up >= p - half_width and down >= p - half_width
    return TailCertificate(up, down, half_width, certified)


def covariate_guardrail_condition(
    cont: CovariateContamination,
    beta: Sequence[float],
    bounds: tuple[float, float],
    b: float,
    p: float,
    stream: RngStream,
    n: int = 200_000,
    confidence: float = DEFAULT_CONFIDENCE,
) -> CovariateVerdict:
    """Bounds within ``sqrt(p / (1 - p)) * b`` of the extreme true responses.

    Raises:
        HypothesisViolatedError: ``p`` outside ``(0, 1/2)``, ``b <= 0``, ``Sigma2 @ beta != 0``
            or ``(b, p)`` not certified against the deployment error.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    lower, upper = float(bounds[0]), float(bounds[1])
    if lower > upper:
        raise InvalidGuardrailError(f"lower bound {lower} exceeds upper bound {upper}")
    if not 0.0 < p < 0.5:
        raise HypothesisViolatedError(f"the tail probability p must lie in (0, 1/2), got {p}")
    if not b > 0:
        raise HypothesisViolatedError(f"the tail level b must be positive, got {b}")
    if cont.domain is None:
        raise ConfigurationError("the covariate condition needs a bounded domain for Z")
    plim = covariate_plim(cont, beta, stream.child(0), n)
    if not plim.consistent:
        raise HypothesisViolatedError(
            "training error is not orthogonal to beta (Sigma2 @ beta != 0)"
        )
    certificate = certify_tails(cont, beta, b, p, stream.child(1), n, confidence)
    if not certificate.certified:
        raise HypothesisViolatedError(
            f"(b, p) = ({b}, {p}) not certified: tail frequencies "
            f"{certificate.upper_frequency:.4g}, {certificate.lower_frequency:.4g}"
        )
    slack = math.sqrt(p / (1.0 - p)) * b
    z_min, z_max = cont.domain.extremes(beta)
    lower_threshold, upper_threshold = z_min + slack, z_max - slack
    holds = lower <= lower_threshold and upper >= upper_threshold
    return CovariateVerdict(holds, lower_threshold, upper_threshold, slack, certificate)


def covariate_decision_model(
    cont: CovariateContamination,
    beta: Sequence[float],
    lower: float = -INF,
    upper: float = INF,
    beta_hat: Optional[Sequence[float]] = None,
    stream: Optional[RngStream] = None,
) -> tuple[framework.JointDecisionModel, framework.LossSpec]:
    """The deployed regression as a framework model.

    The covariate is the true ``Z``; the decision is ``(Z + U0) @ beta_hat`` with ``U0`` the
    deployment error and ``beta_hat`` the large-sample coefficients unless given. The loss
    depends on ``Z`` only.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    coefficients = (
        covariate_plim(cont, beta, stream).coefficients
        if beta_hat is None
        else np.asarray(beta_hat, dtype=float)
    )

    def covariate(rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(cont.true_covariate(rng, size), dtype=float).reshape(size, -1)

    def algorithm(rng: np.random.Generator, size: int, z: Optional[np.ndarray]) -> np.ndarray:
        u0 = np.asarray(cont.deployment(rng, size), dtype=float).reshape(size, -1)
        return (z + u0) @ coefficients

    model = framework.compose_model(
        algorithm, framework.GuardrailSpec(lower=lower, upper=upper), covariate=covariate
    )
    return model, framework.LossSpec.squared_linear(beta)


def mse_compare_covariate(
    cont: CovariateContamination,
    beta: Sequence[float],
    lower: float,
    upper: float,
    n: int,
    stream: RngStream,
    beta_hat: Optional[Sequence[float]] = None,
    confidence: float = DEFAULT_CONFIDENCE,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> CovariateLossComparison:
    """Expected losses ``E[l(x_a(W), Z)]`` and ``E[l(clipped, Z)]`` by Monte Carlo."""
    model, loss = covariate_decision_model(
        cont, beta, lower, upper, beta_hat, None if beta_hat is not None else stream.child(0)
    )

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        draws = model.draw(rng, size)
        return np.column_stack((loss.loss(draws.x_a, draws.w), loss.loss(draws.clipped, draws.w)))

    moments = accumulate_moments(sampler, n, stream.child(1), chunk_size, workers)
    return CovariateLossComparison(
        loss_algorithmic=moments.estimate(0, confidence),
        loss_safeguarded=moments.estimate(1, confidence),
        difference=moments.estimate_linear([1.0, -1.0], confidence),
    )


@dataclass(frozen=True)
class ResponseSetup:
    model: BoundedLinearModel
    contamination: ResponseContamination


@dataclass(frozen=True)
class CovariateSetup:
    contamination: CovariateContamination
    beta: tuple[float, ...]


def mse_compare(
    setup: Union[ResponseSetup, CovariateSetup],
    bounds: tuple[float, float],
    grid: Optional[np.ndarray] = None,
    n: Optional[int] = None,
    stream: Optional[RngStream] = None,
    confidence: float = DEFAULT_CONFIDENCE,
) -> Union[list[LossRow], CovariateLossComparison]:
    """Pointwise loss rows for a response setup, expected losses for a covariate setup."""
    lower, upper = bounds
    if lower > upper:
        raise InvalidGuardrailError(f"lower bound {lower} exceeds upper bound {upper}")
    if isinstance(setup, ResponseSetup):
        beta_hat = None
        if n is not None:
            if stream is None:
                raise ArgumentError("a finite-sample comparison needs a stream")
            beta_hat = simulate_response_contaminated(
                setup.model, setup.contamination, n, stream
            ).fit()
        return mse_compare_response(
            setup.model, setup.contamination, lower, upper, grid, beta_hat, stream
        )
    if n is None or stream is None:
        raise ArgumentError("the covariate comparison is Monte Carlo and needs n and a stream")
    return mse_compare_covariate(
        setup.contamination, setup.beta, lower, upper, n, stream, confidence=confidence
    )
