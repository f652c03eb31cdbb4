"""Guardrail clipping, benefit identities and sufficient/necessary condition reports.

A decision problem is a joint draw ``(x_a, lower, upper, w)``: the algorithm's decision, the
human's bounds (``-inf``/``+inf`` when absent) and an optional covariate vector. The clipped
decision is ``min(max(x_a, lower), upper)`` and its benefit is ``E[l(x_a)] - E[l(clipped)]``.

Every expectation is evaluated either by Monte Carlo on a :class:`RngStream` or, for models
that expose densities, by adaptive quadrature.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from mcp_guardrails.domains import Domain
from mcp_guardrails.errors import (
    ArgumentError,
    ConfigurationError,
    DomainError,
    InvalidGuardrailError,
)
from mcp_guardrails.mc_engine import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CONFIDENCE,
    DEFAULT_TOL,
    EstimateWithCI,
    EstimationMethod,
    RngStream,
    SampleMoments,
    accumulate_moments,
    quadrature_1d,
    quadrature_2d,
    z_value,
)
from mcp_guardrails.ols import fit_ols

logger = logging.getLogger("mcp-guardrails")

INF = math.inf

DEFAULT_SAMPLES = 100_000

BoundGenerator = Union[
    float, Callable[[np.random.Generator, int, Optional[np.ndarray]], np.ndarray]
]
AlgorithmSampler = Union[
    float, Callable[[np.random.Generator, int, Optional[np.ndarray]], np.ndarray]
]
CovariateSampler = Callable[[np.random.Generator, int], np.ndarray]


# --------------------------------------------------------------------------- clipping


def clip(x_a, lower=-INF, upper=INF):
    """``min(max(x_a, lower), upper)``, elementwise; ``-inf``/``+inf`` encode absent bounds.

    Raises:
        InvalidGuardrailError: some ``lower > upper`` (or a bound is NaN).
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    bad = np.isnan(lo) | np.isnan(hi) | (lo > hi)
    if np.any(bad):
        lo_b, hi_b = np.broadcast_arrays(lo, hi)
        index = np.argwhere(np.broadcast_to(bad, lo_b.shape))
        where = tuple(index[0]) if index.size else ()
        raise InvalidGuardrailError(
            f"lower bound {lo_b[where]} exceeds upper bound {hi_b[where]}"
        )
    result = np.minimum(np.maximum(np.asarray(x_a, dtype=float), lo), hi)
    if np.ndim(result) == 0:
        return float(result)
    return result


# --------------------------------------------------------------------------- losses


@dataclass(frozen=True)
class LossSpec:
    """A nonnegative quasiconvex loss ``l(x)`` or ``l(x, w)`` with minimizer ``x*`` or ``x*(w)``."""

    evaluate: Optional[Callable[[np.ndarray], np.ndarray]] = None
    minimizer: Union[float, Callable[[np.ndarray], np.ndarray], None] = None
    evaluate_cov: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.evaluate is None and self.evaluate_cov is None:
            raise ConfigurationError("a loss needs evaluate or evaluate_cov")

    @property
    def covariate_indexed(self) -> bool:
        return self.evaluate_cov is not None or callable(self.minimizer)

    @property
    def has_minimizer(self) -> bool:
        return self.minimizer is not None

    def loss(self, x, w: Optional[np.ndarray] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.evaluate_cov is not None:
            if w is None:
                if self.evaluate is None:
                    raise ConfigurationError("this loss is covariate-indexed and needs w")
            else:
                return np.asarray(self.evaluate_cov(x, w), dtype=float)
        return np.asarray(self.evaluate(x), dtype=float)

    def optimum(self, w: Optional[np.ndarray] = None) -> np.ndarray:
        """``x*`` (a 0-d array) or ``x*(w)`` for each row of ``w``."""
        if self.minimizer is None:
            raise ConfigurationError("loss has no minimizer x*; condition reports need one")
        if callable(self.minimizer):
            if w is None:
                raise ConfigurationError("x*(w) needs covariates but the model draws none")
            return np.asarray(self.minimizer(w), dtype=float)
        return np.asarray(float(self.minimizer))

    @classmethod
    def squared(cls, xstar: float = 0.0) -> "LossSpec":
        xstar = float(xstar)
        return cls(evaluate=lambda x: (x - xstar) ** 2, minimizer=xstar)

    @classmethod
    def squared_linear(cls, beta: Sequence[float]) -> "LossSpec":
        """``(x - w @ beta)^2`` with ``x*(w) = w @ beta``."""
        beta = np.asarray(beta, dtype=float)
        return cls(
            evaluate_cov=lambda x, w: (x - np.asarray(w) @ beta) ** 2,
            minimizer=lambda w: np.asarray(w) @ beta,
        )

    @classmethod
    def from_profit(cls, profit: Callable[[np.ndarray], np.ndarray], optimum: float) -> "LossSpec":
        """Profit shortfall ``pi(x*) - pi(x)`` of a pricing decision."""
        best = float(profit(np.asarray(float(optimum))))
        return cls(evaluate=lambda x: best - profit(x), minimizer=float(optimum))


@dataclass(frozen=True)
class LossCheck:
    nonnegative: bool
    quasiconvex: bool
    minimizer_optimal: bool
    triples: int

    @property
    def passed(self) -> bool:
        return self.nonnegative and self.quasiconvex and self.minimizer_optimal


def check_loss(
    loss: LossSpec,
    stream: RngStream,
    low: float,
    high: float,
    w: Optional[Sequence[float]] = None,
    triples: int = 10_000,
    grid_points: int = 10_001,
    tol: float = 1e-12,
) -> LossCheck:
    """Randomized check of the loss assumptions on ``[low, high]``.

    Covers nonnegativity, quasiconvexity and optimality of the minimizer.
    For covariate-indexed losses ``w`` selects the slice.
    """
    if not low < high:
        raise ArgumentError(f"need low < high, got [{low}, {high}]")
    w_row = None if w is None else np.asarray(w, dtype=float)

    def at(x: np.ndarray) -> np.ndarray:
        if w_row is None:
            return loss.loss(x)
        return loss.loss(x, np.broadcast_to(w_row, (x.size, w_row.size)))

    if w_row is None:
        xstar = float(loss.optimum())
    else:
        xstar = float(loss.optimum(w_row[None, :])[0])
    rng = stream.generator()
    points = np.sort(rng.uniform(low, high, size=(triples, 3)), axis=1)
    values = np.column_stack([at(points[:, i]) for i in range(3)])
    # the middle point of an ordered triple never exceeds both ends
    quasiconvex = bool(np.all(values[:, 1] <= np.maximum(values[:, 0], values[:, 2]) + tol))
    left = points[:, 1] <= xstar
    right = points[:, 0] >= xstar
    quasiconvex &= bool(np.all(values[left, 0] >= values[left, 1] - tol))
    quasiconvex &= bool(np.all(values[right, 1] <= values[right, 2] + tol))

    grid = np.append(np.linspace(low, high, grid_points), xstar)
    grid_values = at(grid)
    nonnegative = bool(np.all(values >= -tol) and np.all(grid_values >= -tol))
    minimizer_optimal = bool(grid_values[-1] <= grid_values.min() + tol)
    return LossCheck(nonnegative, quasiconvex, minimizer_optimal, triples)


# --------------------------------------------------------------------------- guardrails


def _draw_bound(
    gen: Optional[BoundGenerator],
    rng: np.random.Generator,
    size: int,
    w: Optional[np.ndarray],
    absent: float,
) -> np.ndarray:
    if gen is None:
        return np.full(size, absent)
    if callable(gen):
        values = np.asarray(gen(rng, size, w), dtype=float)
        return np.array(np.broadcast_to(values, (size,)), dtype=float)
    return np.full(size, float(gen))


@dataclass(frozen=True)
class GuardrailSpec:
    """Optional lower and upper bound generators.

    A generator is a constant or a callable ``(rng, size, w) -> array``; the callable may use
    the covariate rows ``w`` (``None`` when the model has no covariate).
    """

    lower: Optional[BoundGenerator] = None
    upper: Optional[BoundGenerator] = None

    def draw(
        self, rng: np.random.Generator, size: int, w: Optional[np.ndarray] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        lo = _draw_bound(self.lower, rng, size, w, -INF)
        hi = _draw_bound(self.upper, rng, size, w, INF)
        _check_ordered(lo, hi)
        return lo, hi


def _check_ordered(lo: np.ndarray, hi: np.ndarray) -> None:
    bad = np.isnan(lo) | np.isnan(hi) | (lo > hi)
    if bad.any():
        i = int(np.argmax(bad))
        raise InvalidGuardrailError(f"lower bound {lo[i]} exceeds upper bound {hi[i]} at draw {i}")


@dataclass(frozen=True)
class DecisionDraws:
    x_a: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    w: Optional[np.ndarray] = None

    @property
    def clipped(self) -> np.ndarray:
        return np.minimum(np.maximum(self.x_a, self.lower), self.upper)


@dataclass(frozen=True)
class BoundLaw:
    """Law of one bound: point masses (``+/-inf`` allowed) plus an optional sub-density.

    ``pdf`` integrates to ``1 - sum(atom masses)`` over ``support``.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    pdf: Optional[Callable[[float], float]] = None
    support: tuple[float, float] = (-INF, INF)

    def __post_init__(self):
        atoms = tuple((float(v), float(m)) for v, m in self.atoms)
        if any(m < 0 for _, m in atoms):
            raise ArgumentError("atom masses must be nonnegative")
        mass = sum(m for _, m in atoms)
        if mass > 1.0 + 1e-12:
            raise ArgumentError(f"atom masses sum to {mass} > 1")
        if self.pdf is None and abs(mass - 1.0) > 1e-12:
            raise ArgumentError("a bound law without a density needs atoms summing to 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def fixed(cls, value: float) -> "BoundLaw":
        return cls(atoms=((float(value), 1.0),))

    @property
    def continuous(self) -> bool:
        return self.pdf is not None


@dataclass(frozen=True)
class DecisionDensity:
    """Densities of a decision model for exact evaluation.

    Either ``algorithmic_pdf`` (x_a independent of both bounds) or ``joint_pdf(x_a, bound)``
    for the bound named by ``joint_side``; the other bound is then a pure atom law.
    """

    algorithmic_pdf: Optional[Callable[[float], float]] = None
    algorithmic_support: tuple[float, float] = (-INF, INF)
    lower: Optional[BoundLaw] = None
    upper: Optional[BoundLaw] = None
    joint_pdf: Optional[Callable[[float, float], float]] = None
    joint_side: str = "upper"
    joint_support: tuple[tuple[float, float], tuple[float, float]] = ((-INF, INF), (-INF, INF))

    def __post_init__(self):
        if (self.algorithmic_pdf is None) == (self.joint_pdf is None):
            raise ConfigurationError("give exactly one of algorithmic_pdf and joint_pdf")
        if self.joint_side not in ("lower", "upper"):
            raise ArgumentError(f"joint_side must be 'lower' or 'upper', got {self.joint_side!r}")
        if self.joint_pdf is not None:
            other = self.lower if self.joint_side == "upper" else self.upper
            if other is not None and other.continuous:
                raise ConfigurationError("with a joint density the other bound must be atoms only")
        elif self.lower is not None and self.upper is not None:
            if self.lower.continuous and self.upper.continuous:
                raise ConfigurationError("quadrature supports one bound with a continuous part")


@dataclass(frozen=True)
class JointDecisionModel:
    """Sampler (and optional densities) for the joint draw ``(x_a, lower, upper, w)``."""

    sampler: Callable[[np.random.Generator, int], DecisionDraws]
    density: Optional[DecisionDensity] = None
    independent: bool = False

    def draw(self, rng: np.random.Generator, size: int) -> DecisionDraws:
        draws = self.sampler(rng, size)
        for name in ("x_a", "lower", "upper"):
            shape = np.shape(getattr(draws, name))
            if shape != (size,):
                raise ArgumentError(f"sampler returned {name} of shape {shape}")
        _check_ordered(draws.lower, draws.upper)
        return draws


def compose_model(
    algorithmic: AlgorithmSampler,
    guardrail: GuardrailSpec,
    covariate: Optional[CovariateSampler] = None,
    density: Optional[DecisionDensity] = None,
    independent: bool = False,
) -> JointDecisionModel:
    """Build a model from an algorithm sampler ``(rng, size, w)``, a guardrail and covariates.

    Draw order within a chunk is covariate, decision, lower bound, upper bound.
    """

    def sampler(rng: np.random.Generator, size: int) -> DecisionDraws:
        w = None if covariate is None else np.asarray(covariate(rng, size), dtype=float)
        if callable(algorithmic):
            x_a = np.asarray(algorithmic(rng, size, w), dtype=float)
        else:
            x_a = np.asarray(float(algorithmic))
        x_a = np.array(np.broadcast_to(x_a, (size,)), dtype=float)
        lo, hi = guardrail.draw(rng, size, w)
        return DecisionDraws(x_a, lo, hi, w)

    return JointDecisionModel(sampler, density, independent)


def gaussian_sampler(mean: float, sd: float) -> AlgorithmSampler:
    def draw(rng: np.random.Generator, size: int, w=None) -> np.ndarray:
        return rng.normal(mean, sd, size)

    return draw


def normal_pdf(mean: float, sd: float) -> Callable[[float], float]:
    norm = 1.0 / (sd * math.sqrt(2.0 * math.pi))

    def pdf(x: float) -> float:
        z = (x - mean) / sd
        return norm * math.exp(-0.5 * z * z)

    return pdf


def prediction_model(xstar: float, sigma2: float, n: int, upper: float = INF) -> JointDecisionModel:
    """Sample mean of ``n`` draws from ``N(x*, sigma2)`` under a deterministic upper bound.

    The mean is drawn from its exact law ``N(x*, sigma2 / n)``.
    """
    if sigma2 <= 0 or n < 1:
        raise ArgumentError(f"need sigma2 > 0 and n >= 1, got sigma2={sigma2}, n={n}")
    sd = math.sqrt(sigma2 / n)
    density = DecisionDensity(
        algorithmic_pdf=normal_pdf(xstar, sd), upper=BoundLaw.fixed(upper)
    )
    return compose_model(
        gaussian_sampler(xstar, sd), GuardrailSpec(upper=upper), density=density, independent=True
    )


def regression_model(
    beta: Sequence[float],
    domain: Domain,
    n_train: int,
    noise_sd: float,
    stream: RngStream,
    lower: Optional[BoundGenerator] = None,
    upper: Optional[BoundGenerator] = None,
    intercept: bool = False,
) -> tuple[JointDecisionModel, LossSpec, np.ndarray]:
    """Linear regression with covariates: OLS on a training sample drawn from ``stream``.

    Returns the model (covariate = the feature row, decision = ``w @ beta_hat``), the loss
    ``(x - w @ beta)^2`` and the fitted coefficients. Bound generators receive feature rows.
    """
    beta = np.asarray(beta, dtype=float)

    def features(raw: np.ndarray) -> np.ndarray:
        return np.column_stack((np.ones(len(raw)), raw)) if intercept else raw

    expected = domain.dimension + (1 if intercept else 0)
    if beta.size != expected:
        raise ArgumentError(f"beta has {beta.size} entries, the domain needs {expected}")
    rng = stream.child(0).generator()
    train = features(domain.sample(rng, n_train))
    response = train @ beta + rng.normal(0.0, noise_sd, n_train)
    beta_hat = fit_ols(train, response)

    model = compose_model(
        lambda rng, size, w: w @ beta_hat,
        GuardrailSpec(lower=lower, upper=upper),
        covariate=lambda rng, size: features(domain.sample(rng, size)),
    )
    return model, LossSpec.squared_linear(beta), beta_hat


# --------------------------------------------------------------------------- reports


class ConditionKind(str, Enum):
    SUFFICIENT_UPPER = "sufficient-one-sided-upper"
    NECESSARY_UPPER = "necessary-one-sided-upper"
    SUFFICIENT_LOWER = "sufficient-one-sided-lower"
    NECESSARY_LOWER = "necessary-one-sided-lower"
    SUFFICIENT_TWO_SIDED = "sufficient-two-sided"
    NECESSARY_TWO_SIDED = "necessary-two-sided"
    SUFFICIENT_COVARIATE = "sufficient-covariate"
    NECESSARY_COVARIATE = "necessary-covariate"
    REDUCED_SUFFICIENT = "independent-reduced-sufficient"
    REDUCED_NECESSARY = "independent-reduced-necessary"

    @property
    def sufficient(self) -> bool:
        return self.value.startswith("sufficient") or self is ConditionKind.REDUCED_SUFFICIENT


class Verdict(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


def decide(lhs: EstimateWithCI, rhs: EstimateWithCI) -> Verdict:
    if lhs.lower >= rhs.upper:
        return Verdict.HOLDS
    if lhs.upper < rhs.lower:
        return Verdict.FAILS
    return Verdict.INCONCLUSIVE


@dataclass(frozen=True)
class ConditionReport:
    kind: ConditionKind
    lhs: EstimateWithCI
    rhs: EstimateWithCI
    verdict: Verdict

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "lhs": self.lhs.as_dict(),
            "rhs": self.rhs.as_dict(),
            "verdict": self.verdict.value,
        }


@dataclass(frozen=True)
class BenefitEstimate:
    """Benefit computed directly on clipped draws and through the clipping identity."""

    direct: EstimateWithCI
    identity: EstimateWithCI

    @property
    def value(self) -> float:
        return self.direct.mean

    @property
    def discrepancy(self) -> float:
        return abs(self.direct.mean - self.identity.mean)


def _loss_where(loss: LossSpec, mask, at, fallback, w) -> np.ndarray:
    """``l(at) * mask`` without ever evaluating the loss where ``mask`` is false."""
    safe = np.where(mask, at, fallback)
    return np.where(mask, loss.loss(safe, w), 0.0)


def _benefit_columns(loss: LossSpec, d: DecisionDraws) -> list[np.ndarray]:
    x, lo, hi, w = d.x_a, d.lower, d.upper, d.w
    lx = loss.loss(x, w)
    direct = lx - loss.loss(d.clipped, w)
    below = x <= lo
    above = x >= hi
    identity = np.where(below, lx - _loss_where(loss, below, lo, x, w), 0.0) + np.where(
        above, lx - _loss_where(loss, above, hi, x, w), 0.0
    )
    return [direct, identity]


@dataclass(frozen=True)
class _ConditionForm:
    columns: Callable[[LossSpec, DecisionDraws, np.ndarray], list[np.ndarray]]
    lhs: tuple[int, ...]
    rhs: tuple[int, ...]
    combine: str = "sum"
    needs: str = "any"


def _sufficient_upper(loss, d, xs):
    x, hi, w = d.x_a, d.upper, d.w
    clipped = (x > xs) & (hi <= xs)
    human = hi <= xs
    return [_loss_where(loss, clipped, x, x, w), _loss_where(loss, human, hi, x, w)]


def _necessary_upper(loss, d, xs):
    x, hi, w = d.x_a, d.upper, d.w
    return [
        _loss_where(loss, x >= xs, x, x, w),
        _loss_where(loss, (hi <= xs) & (x > xs), hi, x, w),
    ]


def _sufficient_lower(loss, d, xs):
    x, lo, w = d.x_a, d.lower, d.w
    clipped = (x < xs) & (lo >= xs)
    human = lo >= xs
    return [_loss_where(loss, clipped, x, x, w), _loss_where(loss, human, lo, x, w)]


def _necessary_lower(loss, d, xs):
    x, lo, w = d.x_a, d.lower, d.w
    return [
        _loss_where(loss, x <= xs, x, x, w),
        _loss_where(loss, (lo >= xs) & (x < xs), lo, x, w),
    ]


def _sufficient_two_sided(loss, d, xs):
    x, lo, hi, w = d.x_a, d.lower, d.upper, d.w
    return [
        _loss_where(loss, (x >= xs) & (hi <= xs), x, x, w),
        _loss_where(loss, (x <= xs) & (lo >= xs), x, x, w),
        _loss_where(loss, hi <= xs, hi, x, w),
        _loss_where(loss, lo >= xs, lo, x, w),
    ]


def _necessary_two_sided(loss, d, xs):
    x, lo, hi, w = d.x_a, d.lower, d.upper, d.w
    return [
        loss.loss(x, w),
        _loss_where(loss, (hi <= xs) & (xs <= x), hi, x, w),
        _loss_where(loss, (x <= xs) & (xs <= lo), lo, x, w),
    ]


def _reduced_sufficient(loss, d, xs):
    x, hi, w = d.x_a, d.upper, d.w
    human = hi <= xs
    return [
        _loss_where(loss, x > xs, x, x, w),
        _loss_where(loss, human, hi, x, w),
        human.astype(float),
    ]


def _reduced_necessary(loss, d, xs):
    x, hi, w = d.x_a, d.upper, d.w
    return [
        _loss_where(loss, x >= xs, x, x, w),
        _loss_where(loss, hi <= xs, hi, x, w),
        (x > xs).astype(float),
    ]


_FORMS: dict[ConditionKind, _ConditionForm] = {
    ConditionKind.SUFFICIENT_UPPER: _ConditionForm(_sufficient_upper, (0,), (1,), needs="upper"),
    ConditionKind.NECESSARY_UPPER: _ConditionForm(_necessary_upper, (0,), (1,), needs="upper"),
    ConditionKind.SUFFICIENT_LOWER: _ConditionForm(_sufficient_lower, (0,), (1,), needs="lower"),
    ConditionKind.NECESSARY_LOWER: _ConditionForm(_necessary_lower, (0,), (1,), needs="lower"),
    ConditionKind.SUFFICIENT_TWO_SIDED: _ConditionForm(_sufficient_two_sided, (0, 1), (2, 3)),
    ConditionKind.NECESSARY_TWO_SIDED: _ConditionForm(_necessary_two_sided, (0,), (1, 2)),
    ConditionKind.SUFFICIENT_COVARIATE: _ConditionForm(
        _sufficient_two_sided, (0, 1), (2, 3), needs="covariate"
    ),
    ConditionKind.NECESSARY_COVARIATE: _ConditionForm(
        _necessary_two_sided, (0,), (1, 2), needs="covariate"
    ),
    ConditionKind.REDUCED_SUFFICIENT: _ConditionForm(
        _reduced_sufficient, (0,), (1, 2), combine="ratio", needs="upper"
    ),
    ConditionKind.REDUCED_NECESSARY: _ConditionForm(
        _reduced_necessary, (0,), (1, 2), combine="product", needs="upper"
    ),
}


def _check_finite(block: np.ndarray, draws: DecisionDraws) -> None:
    bad = ~np.isfinite(block)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        w = "" if draws.w is None else f", w={draws.w[row].tolist()}"
        raise DomainError(
            f"loss is not finite at draw {row}: x_a={draws.x_a[row]!r}, "
            f"lower={draws.lower[row]!r}, upper={draws.upper[row]!r}{w}"
        )


def _optimum_for(loss: LossSpec, draws: DecisionDraws) -> np.ndarray:
    return loss.optimum(draws.w) if callable(loss.minimizer) else loss.optimum()


def _monte_carlo_moments(
    model: JointDecisionModel,
    columns: Callable[[DecisionDraws], list[np.ndarray]],
    n: int,
    stream: Optional[RngStream],
    chunk_size: int,
    workers: int,
    check: Optional[Callable[[DecisionDraws], None]] = None,
) -> SampleMoments:
    if stream is None:
        raise ArgumentError("Monte Carlo evaluation needs an RngStream")

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        draws = model.draw(rng, size)
        if check is not None:
            check(draws)
        block = np.column_stack(columns(draws))
        _check_finite(block, draws)
        return block

    return accumulate_moments(sampler, n, stream, chunk_size, workers)


def _scalar_draws(x: float, lo: float, hi: float) -> DecisionDraws:
    return DecisionDraws(np.asarray(x), np.asarray(lo), np.asarray(hi), None)


def _atoms(law: Optional[BoundLaw], absent: float) -> tuple[tuple[float, float], ...]:
    return ((absent, 1.0),) if law is None else law.atoms


def _add(parts: list[tuple[float, EstimateWithCI]]) -> EstimateWithCI:
    mean = sum(weight * est.mean for weight, est in parts)
    error = sum(weight * est.half_width for weight, est in parts)
    neval = sum(est.n_samples for _, est in parts)
    return EstimateWithCI(mean, error, neval, EstimationMethod.QUADRATURE)


def _quadrature_expectation(
    density: DecisionDensity,
    g: Callable[[float, float, float], float],
    xstar: Optional[float],
    tol: float,
) -> EstimateWithCI:
    """``E[g(x_a, lower, upper)]`` under ``density``."""
    marks = () if xstar is None else (xstar,)
    parts: list[tuple[float, EstimateWithCI]] = []

    if density.joint_pdf is not None:
        joint, side = density.joint_pdf, density.joint_side
        (xa_lo, xa_hi), bound_support = density.joint_support
        other = density.lower if side == "upper" else density.upper
        for value, mass in _atoms(other, -INF if side == "upper" else INF):
            if mass == 0:
                continue

            def f(b, x, value=value):
                p = joint(x, b)
                if p == 0:
                    return 0.0
                lo, hi = (value, b) if side == "upper" else (b, value)
                if lo > hi:
                    raise InvalidGuardrailError(f"lower bound {lo} exceeds upper bound {hi}")
                return p * g(x, lo, hi)

            est = quadrature_2d(
                f,
                bound_support,
                (xa_lo, xa_hi),
                tol,
                outer_points=(value, *marks),
                inner_points=lambda b, value=value: (b, value, *marks),
            )
            parts.append((mass, est))
        return _add(parts)

    pdf = density.algorithmic_pdf
    a, b = density.algorithmic_support
    lower_atoms = _atoms(density.lower, -INF)
    upper_atoms = _atoms(density.upper, INF)
    for lo, p_lo in lower_atoms:
        for hi, p_hi in upper_atoms:
            if p_lo * p_hi == 0:
                continue
            if lo > hi:
                raise InvalidGuardrailError(f"lower bound {lo} exceeds upper bound {hi}")

            def f1(x, lo=lo, hi=hi):
                p = pdf(x)
                return 0.0 if p == 0 else p * g(x, lo, hi)

            parts.append((p_lo * p_hi, quadrature_1d(f1, a, b, tol, points=(lo, hi, *marks))))

    for side in ("upper", "lower"):
        law = density.upper if side == "upper" else density.lower
        if law is None or not law.continuous:
            continue
        fixed_atoms = lower_atoms if side == "upper" else upper_atoms
        q = law.pdf
        for value, mass in fixed_atoms:
            if mass == 0:
                continue

            def f2(h, x, value=value, side=side):
                p = q(h)
                if p == 0:
                    return 0.0
                px = pdf(x)
                if px == 0:
                    return 0.0
                lo, hi = (value, h) if side == "upper" else (h, value)
                if lo > hi:
                    raise InvalidGuardrailError(f"lower bound {lo} exceeds upper bound {hi}")
                return p * px * g(x, lo, hi)

            est = quadrature_2d(
                f2,
                law.support,
                (a, b),
                tol,
                outer_points=(value, *marks),
                inner_points=lambda h, value=value: (h, value, *marks),
            )
            parts.append((mass, est))
    return _add(parts)


def _require_density(model: JointDecisionModel) -> DecisionDensity:
    if model.density is None:
        raise ConfigurationError("quadrature needs a model that exposes densities")
    return model.density


def _quadrature_columns(
    model: JointDecisionModel,
    loss: LossSpec,
    columns: Callable[[DecisionDraws], list[np.ndarray]],
    count: int,
    tol: float,
) -> list[EstimateWithCI]:
    density = _require_density(model)
    if loss.covariate_indexed:
        raise ConfigurationError("covariate-indexed losses are evaluated by Monte Carlo only")
    xstar = float(loss.optimum()) if loss.has_minimizer else None

    def column(i: int) -> Callable[[float, float, float], float]:
        def g(x: float, lo: float, hi: float) -> float:
            value = float(columns(_scalar_draws(x, lo, hi))[i])
            if not math.isfinite(value):
                raise DomainError(f"loss is not finite at x_a={x!r}, lower={lo!r}, upper={hi!r}")
            return value

        return g

    return [_quadrature_expectation(density, column(i), xstar, tol) for i in range(count)]


def _method(method: Union[str, EstimationMethod]) -> EstimationMethod:
    try:
        method = EstimationMethod(method)
    except ValueError:
        raise ArgumentError(
            f"unknown method {method!r}; expected one of {EstimationMethod.values()}"
        ) from None
    if method is EstimationMethod.EXACT:
        raise ArgumentError("benefit and condition estimates use monte-carlo or quadrature")
    return method


def benefit(
    model: JointDecisionModel,
    loss: LossSpec,
    method: Union[str, EstimationMethod] = EstimationMethod.MONTE_CARLO,
    n: int = DEFAULT_SAMPLES,
    stream: Optional[RngStream] = None,
    confidence: float = DEFAULT_CONFIDENCE,
    tol: float = DEFAULT_TOL,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> BenefitEstimate:
    """``E[l(x_a)] - E[l(clipped)]``, directly and through the clipping identity.

    On Monte Carlo both forms use the same draws and agree draw by draw.
    """
    method = _method(method)

    def columns(d: DecisionDraws) -> list[np.ndarray]:
        return _benefit_columns(loss, d)

    if method is EstimationMethod.QUADRATURE:
        direct, identity = _quadrature_columns(model, loss, columns, 2, tol)
        return BenefitEstimate(direct, identity)
    moments = _monte_carlo_moments(model, columns, n, stream, chunk_size, workers)
    return BenefitEstimate(moments.estimate(0, confidence), moments.estimate(1, confidence))


def _bound_checker(form: _ConditionForm, kind: ConditionKind) -> Callable[[DecisionDraws], None]:
    def check(d: DecisionDraws) -> None:
        if form.needs == "upper" and np.any(d.lower > -INF):
            raise ArgumentError(f"{kind.value} needs a guardrail without a lower bound")
        if form.needs == "lower" and np.any(d.upper < INF):
            raise ArgumentError(f"{kind.value} needs a guardrail without an upper bound")
        if form.needs == "covariate" and d.w is None:
            raise ArgumentError(f"{kind.value} needs a model that draws covariates")

    return check


def _check_density_bounds(density: DecisionDensity, form: _ConditionForm, kind: ConditionKind):
    def finite(law: Optional[BoundLaw], absent: float) -> bool:
        if law is None:
            return False
        return law.continuous or any(v != absent and m > 0 for v, m in law.atoms)

    lower_present = finite(density.lower, -INF) or (
        density.joint_pdf is not None and density.joint_side == "lower"
    )
    upper_present = finite(density.upper, INF) or (
        density.joint_pdf is not None and density.joint_side == "upper"
    )
    if form.needs == "upper" and lower_present:
        raise ArgumentError(f"{kind.value} needs a guardrail without a lower bound")
    if form.needs == "lower" and upper_present:
        raise ArgumentError(f"{kind.value} needs a guardrail without an upper bound")
    if form.needs == "covariate":
        raise ConfigurationError("covariate conditions are evaluated by Monte Carlo only")


def _combine_mc(
    moments: SampleMoments, indices: tuple[int, ...], combine: str, confidence: float
) -> EstimateWithCI:
    if combine == "sum":
        weights = np.zeros(moments.dimension)
        weights[list(indices)] = 1.0
        return moments.estimate_linear(weights, confidence)
    i, j = indices
    mi, mj = float(moments.mean[i]), float(moments.mean[j])
    gradient = np.zeros(moments.dimension)
    if combine == "ratio":
        if mj == 0.0:
            return EstimateWithCI(0.0, 0.0, moments.n)
        gradient[i], gradient[j] = 1.0 / mj, -mi / mj**2
        return moments.estimate_function(mi / mj, gradient, confidence)
    gradient[i], gradient[j] = mj, mi
    return moments.estimate_function(mi * mj, gradient, confidence)


def _combine_quadrature(
    parts: list[EstimateWithCI], indices: tuple[int, ...], combine: str
) -> EstimateWithCI:
    chosen = [parts[i] for i in indices]
    neval = sum(p.n_samples for p in chosen)
    if combine == "sum":
        return EstimateWithCI(
            sum(p.mean for p in chosen), sum(p.half_width for p in chosen), neval,
            EstimationMethod.QUADRATURE,
        )
    a, b = chosen
    if combine == "ratio":
        if b.mean == 0.0:
            return EstimateWithCI(0.0, 0.0, neval, EstimationMethod.QUADRATURE)
        error = a.half_width / abs(b.mean) + abs(a.mean) * b.half_width / b.mean**2
        return EstimateWithCI(a.mean / b.mean, error, neval, EstimationMethod.QUADRATURE)
    error = abs(b.mean) * a.half_width + abs(a.mean) * b.half_width + a.half_width * b.half_width
    return EstimateWithCI(a.mean * b.mean, error, neval, EstimationMethod.QUADRATURE)


def condition_report(
    model: JointDecisionModel,
    loss: LossSpec,
    kind: Union[str, ConditionKind],
    method: Union[str, EstimationMethod] = EstimationMethod.MONTE_CARLO,
    n: int = DEFAULT_SAMPLES,
    stream: Optional[RngStream] = None,
    confidence: float = DEFAULT_CONFIDENCE,
    tol: float = DEFAULT_TOL,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    workers: int = 1,
) -> ConditionReport:
    """Evaluate both sides of a sufficient or necessary condition for a beneficial guardrail."""
    try:
        kind = ConditionKind(kind)
    except ValueError:
        raise ArgumentError(f"unknown condition kind {kind!r}") from None
    method = _method(method)
    if not loss.has_minimizer:
        raise ConfigurationError("loss has no minimizer x*; condition reports need one")
    if kind in (ConditionKind.REDUCED_SUFFICIENT, ConditionKind.REDUCED_NECESSARY):
        if not model.independent:
            raise ArgumentError(f"{kind.value} needs a model flagged independent")
    form = _FORMS[kind]

    def columns(d: DecisionDraws) -> list[np.ndarray]:
        return form.columns(loss, d, _optimum_for(loss, d))

    count = max(form.lhs + form.rhs) + 1
    if method is EstimationMethod.QUADRATURE:
        _check_density_bounds(_require_density(model), form, kind)
        parts = _quadrature_columns(model, loss, columns, count, tol)
        lhs = _combine_quadrature(parts, form.lhs, "sum")
        rhs = _combine_quadrature(parts, form.rhs, form.combine)
    else:
        moments = _monte_carlo_moments(
            model, columns, n, stream, chunk_size, workers, _bound_checker(form, kind)
        )
        lhs = _combine_mc(moments, form.lhs, "sum", confidence)
        rhs = _combine_mc(moments, form.rhs, form.combine, confidence)
    return ConditionReport(kind, lhs, rhs, decide(lhs, rhs))


# --------------------------------------------------------------------------- curves


@dataclass(frozen=True)
class CurvePoint:
    x_h: float
    benefit: EstimateWithCI


def benefit_curve(
    family: Callable[[float], JointDecisionModel],
    loss: LossSpec,
    grid: Sequence[float],
    method: Union[str, EstimationMethod] = EstimationMethod.MONTE_CARLO,
    n: int = DEFAULT_SAMPLES,
    stream: Optional[RngStream] = None,
    confidence: float = DEFAULT_CONFIDENCE,
    tol: float = DEFAULT_TOL,
    workers: int = 1,
) -> list[CurvePoint]:
    """Benefit of a deterministic upper bound ``x_h`` at every grid point.

    Every grid point reuses ``stream``, so Monte Carlo curves share their draws.
    """
    grid = [float(x) for x in grid]
    if not grid:
        raise ArgumentError("benefit curve needs a nonempty grid")
    if any(b < a for a, b in zip(grid[:-1], grid[1:])):
        raise ArgumentError("benefit curve grid must be sorted ascending")
    curve = []
    for x_h in grid:
        estimate = benefit(
            family(x_h), loss, method, n, stream, confidence, tol, workers=workers
        )
        curve.append(CurvePoint(x_h, estimate.direct))
    return curve


def curve_peak(curve: Sequence[CurvePoint]) -> float:
    if not curve:
        raise ArgumentError("empty curve")
    values = [p.benefit.mean for p in curve]
    return curve[int(np.argmax(values))].x_h


def is_unimodal(curve: Sequence[CurvePoint], slack: float = 2.0) -> bool:
    """No interior local minimum: nondecreasing up to the peak and nonincreasing after it.

    Each step may go the wrong way by at most ``slack`` times the two half-widths.
    """
    if len(curve) < 3:
        return True
    values = [p.benefit.mean for p in curve]
    widths = [p.benefit.half_width for p in curve]
    peak = int(np.argmax(values))
    for i in range(len(curve) - 1):
        allowance = slack * (widths[i] + widths[i + 1])
        step = values[i + 1] - values[i]
        if i < peak and step < -allowance:
            return False
        if i >= peak and step > allowance:
            return False
    return True


# --------------------------------------------------------------------------- counterexample


@dataclass(frozen=True)
class TightnessResult:
    lhs: float
    scaled_rhs: float
    algorithmic_mass: EstimateWithCI
    human_loss_mass: EstimateWithCI
    lhs_ratio_check: bool
    benefit: EstimateWithCI
    loss_increase_bound: float


def tightness_model(sigma2: float, xstar: float, epsilon: float) -> JointDecisionModel:
    """``X_a ~ N(x*, sigma2)`` against a heavy-tailed upper bound.

    The bound is ``+inf`` with probability ``1 - epsilon`` and otherwise has density
    ``3 epsilon / (h - x*)^4`` on ``h <= x* - 1``.
    """
    sd = math.sqrt(sigma2)

    def upper(rng: np.random.Generator, size: int, w=None) -> np.ndarray:
        finite = rng.random(size) < epsilon
        # inverse CDF of the conditional law: x* - U^(-1/3)
        tail = xstar - rng.random(size) ** (-1.0 / 3.0)
        return np.where(finite, tail, INF)

    def tail_pdf(h: float) -> float:
        if h > xstar - 1.0:
            return 0.0
        return 3.0 * epsilon / (h - xstar) ** 4

    density = DecisionDensity(
        algorithmic_pdf=normal_pdf(xstar, sd),
        upper=BoundLaw(atoms=((INF, 1.0 - epsilon),), pdf=tail_pdf, support=(-INF, xstar - 1.0)),
    )
    return compose_model(
        gaussian_sampler(xstar, sd), GuardrailSpec(upper=upper), density=density, independent=True
    )


def tightness_counterexample(
    a: float,
    sigma2: float,
    xstar: float,
    epsilon: float,
    method: Union[str, EstimationMethod] = EstimationMethod.QUADRATURE,
    n: int = DEFAULT_SAMPLES,
    stream: Optional[RngStream] = None,
    tol: float = DEFAULT_TOL,
) -> TightnessResult:
    """A model where the scaled sufficient condition holds yet the guardrail hurts.

    Raises:
        ArgumentError: ``a < 1/4``, ``sigma2`` outside ``(0, 3/2)``, ``x* >= 1`` or
            ``epsilon`` outside ``(0, sigma2 / (6a))``.
    """
    if a < 0.25:
        raise ArgumentError(f"a must be at least 1/4, got {a}")
    if not 0.0 < sigma2 < 1.5:
        raise ArgumentError(f"sigma2 must lie in (0, 3/2), got {sigma2}")
    if not xstar < 1.0:
        raise ArgumentError(f"x* must be below 1, got {xstar}")
    if not 0.0 < epsilon < sigma2 / (6.0 * a):
        raise ArgumentError(f"epsilon must lie in (0, {sigma2 / (6.0 * a)}), got {epsilon}")

    lhs = sigma2 / 2.0
    scaled_rhs = 3.0 * a * epsilon
    pdf = normal_pdf(xstar, math.sqrt(sigma2))
    algorithmic_mass = quadrature_1d(lambda x: (x - xstar) ** 2 * pdf(x), xstar, INF, tol)
    human_loss_mass = quadrature_1d(
        lambda h: 3.0 * epsilon / (h - xstar) ** 2, -INF, xstar - 1.0, tol
    )
    model = tightness_model(sigma2, xstar, epsilon)
    estimate = benefit(model, LossSpec.squared(xstar), method, n, stream, tol=tol).direct
    logger.info(
        f"tightness counterexample: lhs={lhs:.6g}, a*rhs={scaled_rhs:.6g}, "
        f"benefit={estimate.mean:.6g}"
    )
    return TightnessResult(
        lhs=lhs,
        scaled_rhs=scaled_rhs,
        algorithmic_mass=algorithmic_mass,
        human_loss_mass=human_loss_mass,
        lhs_ratio_check=lhs >= scaled_rhs,
        benefit=estimate,
        loss_increase_bound=1.5 * epsilon - epsilon * sigma2,
    )


# --------------------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class IndependenceDiagnostic:
    lower: Optional[EstimateWithCI] = None
    upper: Optional[EstimateWithCI] = None

    @property
    def consistent(self) -> bool:
        return all(e is None or e.contains(0.0) for e in (self.lower, self.upper))


def _correlation(x: np.ndarray, y: np.ndarray, confidence: float) -> Optional[EstimateWithCI]:
    keep = np.isfinite(y)
    if keep.sum() < 4 or np.ptp(y[keep]) == 0.0 or np.ptp(x[keep]) == 0.0:
        return None
    r, _ = stats.pearsonr(x[keep], y[keep])
    r = float(np.clip(r, -0.999999, 0.999999))
    half = z_value(confidence) / math.sqrt(keep.sum() - 3)
    low, high = math.tanh(math.atanh(r) - half), math.tanh(math.atanh(r) + half)
    return EstimateWithCI(r, max(r - low, high - r), int(keep.sum()))


def independence_diagnostic(
    model: JointDecisionModel,
    n: int,
    stream: RngStream,
    confidence: float = DEFAULT_CONFIDENCE,
) -> IndependenceDiagnostic:
    """Correlation of ``x_a`` with each random finite bound, with a Fisher-z interval.

    Bounds that are constant (or infinite) in every draw are reported as ``None``.
    """
    draws = model.draw(stream.generator(), n)
    return IndependenceDiagnostic(
        lower=_correlation(draws.x_a, draws.lower, confidence),
        upper=_correlation(draws.x_a, draws.upper, confidence),
    )
