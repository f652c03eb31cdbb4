"""Config-driven replication sweeps with reproducible CSV output.

A scenario file is TOML::

    scenario = "competition"
    seed = 42
    replications = 100
    output = "results"

    [parameters]
    alpha = 10.0
    beta = 2.0

    [sweep]
    n = [1000, 10000]

Sweep lists expand to their cartesian product, in file order. Replication ``r`` of sweep point
``i`` draws from ``RngStream(seed, (i, r))`` and rows are written in ``(i, r)`` order, so the
CSV does not depend on the thread count.
"""

import concurrent.futures
import csv
import io
import itertools
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from mcp_guardrails import competition, contamination, framework, misspec
from mcp_guardrails.domains import BoxDomain
from mcp_guardrails.errors import (
    ArgumentError,
    ConditionInapplicableError,
    ConfigurationError,
    DegenerateDesignError,
    GuardrailSimError,
    HypothesisViolatedError,
    NonpositiveSlopeError,
)
from mcp_guardrails.mc_engine import DEFAULT_CONFIDENCE, EstimationMethod, RngStream, z_value
from mcp_guardrails.mcp_env import get_simulation_config

logger = logging.getLogger("mcp-guardrails")

MANIFEST_SCHEMA_VERSION = 1

INDEX_COLUMNS = ("sweep_index", "replication")

# failures recorded on the row instead of aborting the run
ROW_ERRORS = (
    HypothesisViolatedError,
    NonpositiveSlopeError,
    DegenerateDesignError,
    ConditionInapplicableError,
)

_REQUIRED = object()

NUMERIC_FIELDS = ("chunk_size", "confidence", "quadrature_tol")

CONFIG_FIELDS = frozenset(
    ("scenario", "parameters", "seed", "replications", "sweep", "output") + NUMERIC_FIELDS
)


class ScenarioKind(str, Enum):
    FRAMEWORK = "framework"
    COMPETITION = "competition"
    MISSPEC = "misspec"
    CONTAMINATION_RESPONSE = "contamination-response"
    CONTAMINATION_COVARIATE = "contamination-covariate"

    @classmethod
    def values(cls) -> list[str]:
        return [kind.value for kind in cls]


def _status(exc: Exception) -> str:
    if isinstance(exc, HypothesisViolatedError):
        return "hypothesis-violated"
    if isinstance(exc, ConditionInapplicableError):
        return "inapplicable"
    return "degenerate"


@dataclass(frozen=True)
class NumericSettings:
    """Settings that change result values, fixed per run and echoed in the manifest."""

    chunk_size: int
    confidence: float
    quadrature_tol: float

    @classmethod
    def from_dict(cls, data: dict, errors: list[str]) -> "NumericSettings":
        """Keys present in ``data`` win over the environment; problems go to ``errors``."""
        sim = get_simulation_config()
        start = len(errors)
        chunk_size = data["chunk_size"] if "chunk_size" in data else sim.chunk_size
        if isinstance(chunk_size, bool) or not isinstance(chunk_size, int) or chunk_size < 1:
            errors.append(f"chunk_size: must be a positive integer, got {chunk_size!r}")
        confidence = data["confidence"] if "confidence" in data else sim.confidence
        if not _real(confidence) or not 0.0 < confidence < 1.0:
            errors.append(f"confidence: must lie in (0, 1), got {confidence!r}")
        tol = data["quadrature_tol"] if "quadrature_tol" in data else sim.quadrature_tol
        if not _real(tol) or not tol > 0:
            errors.append(f"quadrature_tol: must be positive, got {tol!r}")
        if len(errors) > start:
            return cls(1, DEFAULT_CONFIDENCE, 1.0)
        return cls(chunk_size, float(confidence), float(tol))

    @classmethod
    def from_environment(cls) -> "NumericSettings":
        sim = get_simulation_config()
        return cls(sim.chunk_size, sim.confidence, sim.quadrature_tol)

    def echo(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "confidence": self.confidence,
            "quadrature_tol": self.quadrature_tol,
        }


def _real(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


# --------------------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class ScenarioHandler:
    parameters: dict[str, Any]
    columns: tuple[str, ...]
    build: Callable[[dict, NumericSettings], Any]
    replicate: Callable[[Any, RngStream], dict]
    series: Optional[Callable[[Any, RngStream], list[dict]]] = None
    series_columns: tuple[str, ...] = ()


def _positive_int(params: dict, name: str, minimum: int = 1) -> int:
    value = params[name]
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ArgumentError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _bound(value, absent: float) -> float:
    return absent if value is None else float(value)


# framework: the prediction setting under a deterministic upper bound


@dataclass(frozen=True)
class _FrameworkSetup:
    model: framework.JointDecisionModel
    loss: framework.LossSpec
    upper: float
    method: EstimationMethod
    samples: int
    tol: float
    chunk_size: int
    confidence: float


def _framework_build(p: dict, numerics: NumericSettings) -> _FrameworkSetup:
    try:
        method = EstimationMethod(p["method"])
    except ValueError:
        raise ArgumentError(
            f"method must be monte-carlo or quadrature, got {p['method']!r}"
        ) from None
    if method is EstimationMethod.EXACT:
        raise ArgumentError("method must be monte-carlo or quadrature, got 'exact'")
    return _FrameworkSetup(
        model=framework.prediction_model(
            float(p["xstar"]), float(p["sigma2"]), _positive_int(p, "n_obs"), float(p["upper"])
        ),
        loss=framework.LossSpec.squared(float(p["xstar"])),
        upper=float(p["upper"]),
        method=method,
        samples=_positive_int(p, "samples", 2),
        tol=numerics.quadrature_tol,
        chunk_size=numerics.chunk_size,
        confidence=numerics.confidence,
    )


_FRAMEWORK_CONDITIONS = (
    ("sufficient", framework.ConditionKind.SUFFICIENT_UPPER),
    ("necessary", framework.ConditionKind.NECESSARY_UPPER),
    ("reduced_sufficient", framework.ConditionKind.REDUCED_SUFFICIENT),
)


def _framework_row(setup: _FrameworkSetup, stream: RngStream) -> dict:
    def options(i: int) -> dict:
        return dict(
            method=setup.method, n=setup.samples, stream=stream.child(i),
            confidence=setup.confidence, tol=setup.tol, chunk_size=setup.chunk_size,
        )

    estimate = framework.benefit(setup.model, setup.loss, **options(0))
    row = {
        "upper": setup.upper,
        "method": setup.method.value,
        "benefit": estimate.direct.mean,
        "benefit_half_width": estimate.direct.half_width,
        "benefit_identity": estimate.identity.mean,
    }
    for i, (name, kind) in enumerate(_FRAMEWORK_CONDITIONS, start=1):
        report = framework.condition_report(setup.model, setup.loss, kind, **options(i))
        row[f"{name}_lhs"] = report.lhs.mean
        row[f"{name}_rhs"] = report.rhs.mean
        row[f"{name}_verdict"] = report.verdict.value
    row["status"] = "ok"
    return row


# competition


def _competition_build(p: dict, numerics: NumericSettings):
    params = competition.DuopolyParams(
        float(p["alpha"]), float(p["beta"]), float(p["gamma"]), float(p["noise_sd"])
    )
    hist = competition.PriceHistoryModel(
        float(p["mu"]), float(p["sigma2"]), float(p["rho"]), p["family"]
    )
    n = _positive_int(p, "n", 3)
    p_prime = hist.mu if p["p_prime"] is None else float(p["p_prime"])
    if not p_prime > 0:
        raise ArgumentError(f"p_prime must be positive, got {p_prime}")
    return params, hist, n, p_prime


def _competition_row(setup, stream: RngStream) -> dict:
    params, hist, n, p_prime = setup
    outcome = competition.run_replication(params, hist, n, p_prime, stream)
    row = outcome.as_row()
    del row["degenerate"]
    row["plim_price"] = competition.plim_price(params, hist)
    row["status"] = "degenerate" if outcome.degenerate else "ok"
    try:
        row["p_L"] = competition.matching_threshold(params, hist)
    except HypothesisViolatedError:
        row["p_L"] = None
        if row["status"] == "ok":
            row["status"] = "hypothesis-violated"
    return row


# misspecification


def _misspec_oracle(p: dict) -> misspec.DemandOracle:
    family = misspec.DemandFamily(p["family"])
    if family is misspec.DemandFamily.CUSTOM:
        raise ArgumentError("custom demand oracles cannot be configured from a file")
    return misspec.DemandOracle(family, float(p["a"]), float(p["b"]))


def _misspec_build(p: dict, numerics: NumericSettings):
    try:
        oracle = _misspec_oracle(p)
    except ValueError as exc:
        raise ArgumentError(f"family: {exc}") from None
    exp = misspec.GridExperiment(
        float(p["c"]), float(p["p_bar"]), _positive_int(p, "n", 2), _positive_int(p, "K"),
        float(p["noise_sd"]),
    )
    return oracle, exp, misspec.limit_algorithmic_price(oracle, exp)


def _misspec_row(setup, stream: RngStream) -> dict:
    oracle, exp, limit = setup
    row = misspec.run_replication(oracle, exp, stream).as_row()
    row["K"] = exp.K
    row["n"] = exp.n
    row["limit_price"] = limit
    row["status"] = "degenerate" if row.pop("degenerate") else "ok"
    return row


def _misspec_series(setup, stream: RngStream) -> list[dict]:
    oracle, exp, _ = setup
    observations = misspec.run_grid_experiment(oracle, exp, stream)
    return misspec.figure_series(oracle, exp, observations)


# response contamination


def _box(p: dict) -> BoxDomain:
    return BoxDomain(tuple(p["domain_lower"]), tuple(p["domain_upper"]))


def _response_build(p: dict, numerics: NumericSettings):
    model = contamination.BoundedLinearModel(
        tuple(p["beta"]), _box(p), float(p["noise_sd"]), bool(p["intercept"])
    )
    cont = contamination.ResponseContamination(float(p["magnitude"]), float(p["propensity"]))
    n = _positive_int(p, "n", len(model.beta) + 1)
    upper = _bound(p["upper"], math.inf)
    lower = None if p["lower"] is None else float(p["lower"])
    if lower is not None and lower > upper:
        raise ArgumentError(f"lower bound {lower} exceeds upper bound {upper}")
    return model, cont, n, lower, upper


def _response_row(setup, stream: RngStream) -> dict:
    model, cont, n, lower, upper = setup
    dataset = contamination.simulate_response_contaminated(model, cont, n, stream)
    plim = contamination.response_plim(model, cont)
    verdict = contamination.response_guardrail_condition(model, cont, upper, lower)
    low = -math.inf if lower is None else lower
    asymptotic = contamination.mse_compare_response(model, cont, low, upper)
    fitted = contamination.mse_compare_response(model, cont, low, upper, beta_hat=dataset.fit())
    return {
        "n": n,
        "expected_bias": plim.bias,
        "max_prediction_bias": contamination.max_prediction_bias(dataset, model, plim.bias),
        "condition_holds": verdict.holds,
        "upper_threshold": verdict.upper_threshold,
        "lower_threshold": verdict.lower_threshold,
        "asymptotic_max_loss_algorithmic": max(r.loss_algorithmic for r in asymptotic),
        "asymptotic_max_loss_safeguarded": max(r.loss_safeguarded for r in asymptotic),
        "asymptotic_points_worsened": sum(r.worsened for r in asymptotic),
        "fitted_points_worsened": sum(r.worsened for r in fitted),
        "status": "ok",
    }


# covariate contamination


def _covariate_build(p: dict, numerics: NumericSettings):
    domain = _box(p)
    beta = np.asarray(p["beta"], dtype=float)
    error_sd = np.asarray(p["error_sd"], dtype=float)
    if beta.shape != (domain.dimension,) or error_sd.shape != (domain.dimension,):
        raise ArgumentError(
            f"beta and error_sd need {domain.dimension} entries to match the domain"
        )
    if np.any(error_sd < 0):
        raise ArgumentError("error_sd entries must be nonnegative")
    sigma2 = np.diag(error_sd**2)
    deployment = None
    if p["deployment_direction"] is not None:
        deployment = contamination.symmetric_two_point(
            p["deployment_direction"], float(p["deployment_prob"])
        )
    cont = contamination.CovariateContamination.on_domain(
        domain, contamination.gaussian_vector(sigma2), deployment, sigma2
    )
    cont = replace(cont, sigma1=contamination.box_second_moment(domain))
    bounds = (_bound(p["lower"], -math.inf), _bound(p["upper"], math.inf))
    if bounds[0] > bounds[1]:
        raise ArgumentError(f"lower bound {bounds[0]} exceeds upper bound {bounds[1]}")
    plim = contamination.covariate_plim(cont, beta)
    return {
        "cont": cont,
        "beta": beta,
        "plim": plim,
        "bounds": bounds,
        "b": float(p["b"]),
        "p": float(p["p"]),
        "n": _positive_int(p, "n", beta.size + 1),
        "samples": _positive_int(p, "samples", 2),
        "noise_sd": float(p["noise_sd"]),
        "numerics": numerics,
    }


def _covariate_row(setup: dict, stream: RngStream) -> dict:
    cont, beta, plim = setup["cont"], setup["beta"], setup["plim"]
    numerics = setup["numerics"]
    lower, upper = setup["bounds"]
    dataset = contamination.simulate_covariate_contaminated(
        cont, beta, setup["n"], setup["noise_sd"], stream.child(0)
    )
    row = {
        "n": setup["n"],
        "coefficient_error": float(np.linalg.norm(dataset.fit() - plim.coefficients)),
        "consistent": plim.consistent,
        "condition_holds": None,
        "lower_threshold": None,
        "upper_threshold": None,
        "status": "ok",
    }
    try:
        verdict = contamination.covariate_guardrail_condition(
            cont, beta, (lower, upper), setup["b"], setup["p"], stream.child(1), setup["samples"],
            confidence=numerics.confidence,
        )
        row.update(
            condition_holds=verdict.holds,
            lower_threshold=verdict.lower_threshold,
            upper_threshold=verdict.upper_threshold,
        )
    except HypothesisViolatedError as exc:
        logger.warning(f"covariate condition not applicable at {stream.path}: {exc}")
        row["status"] = "hypothesis-violated"
    comparison = contamination.mse_compare_covariate(
        cont, beta, lower, upper, setup["samples"], stream.child(2), beta_hat=plim.coefficients,
        confidence=numerics.confidence, chunk_size=numerics.chunk_size,
    )
    row.update(
        loss_algorithmic=comparison.loss_algorithmic.mean,
        loss_safeguarded=comparison.loss_safeguarded.mean,
        difference=comparison.difference.mean,
        difference_half_width=comparison.difference.half_width,
    )
    return row


SCENARIOS: dict[ScenarioKind, ScenarioHandler] = {
    ScenarioKind.FRAMEWORK: ScenarioHandler(
        parameters={
            "xstar": 0.0,
            "sigma2": 1.0,
            "n_obs": 100,
            "upper": _REQUIRED,
            "method": "monte-carlo",
            "samples": 100_000,
        },
        columns=(
            "upper", "method", "benefit", "benefit_half_width", "benefit_identity",
            "sufficient_lhs", "sufficient_rhs", "sufficient_verdict",
            "necessary_lhs", "necessary_rhs", "necessary_verdict",
            "reduced_sufficient_lhs", "reduced_sufficient_rhs", "reduced_sufficient_verdict",
            "status",
        ),
        build=_framework_build,
        replicate=_framework_row,
    ),
    ScenarioKind.COMPETITION: ScenarioHandler(
        parameters={
            "alpha": _REQUIRED,
            "beta": _REQUIRED,
            "gamma": _REQUIRED,
            "noise_sd": 1.0,
            "mu": _REQUIRED,
            "sigma2": 1.0,
            "rho": 0.0,
            "family": "gaussian",
            "n": _REQUIRED,
            "p_prime": None,
        },
        columns=(
            "n", "alpha_hat", "beta_hat", "p_a", "plim_price", "p_prime", "p_matched",
            "revenue_a", "revenue_matched", "p_L", "status",
        ),
        build=_competition_build,
        replicate=_competition_row,
    ),
    ScenarioKind.MISSPEC: ScenarioHandler(
        parameters={
            "family": "exponential",
            "a": _REQUIRED,
            "b": 1.0,
            "c": _REQUIRED,
            "p_bar": _REQUIRED,
            "n": 10,
            "K": _REQUIRED,
            "noise_sd": 1.0,
        },
        columns=(
            "K", "n", "alpha_hat", "beta_hat", "p_a", "limit_price", "j_star", "p_lo", "p_hi",
            "p_safeguarded", "profit_a", "profit_safeguarded", "profit_optimal",
            "contains_optimum", "status",
        ),
        build=_misspec_build,
        replicate=_misspec_row,
        series=_misspec_series,
        series_columns=(
            "price", "observed_demand", "fitted_demand", "true_demand", "empirical_profit",
            "true_profit",
        ),
    ),
    ScenarioKind.CONTAMINATION_RESPONSE: ScenarioHandler(
        parameters={
            "beta": _REQUIRED,
            "domain_lower": _REQUIRED,
            "domain_upper": _REQUIRED,
            "intercept": False,
            "noise_sd": 1.0,
            "magnitude": _REQUIRED,
            "propensity": _REQUIRED,
            "n": _REQUIRED,
            "upper": None,
            "lower": None,
        },
        columns=(
            "n", "expected_bias", "max_prediction_bias", "condition_holds", "upper_threshold",
            "lower_threshold", "asymptotic_max_loss_algorithmic",
            "asymptotic_max_loss_safeguarded", "asymptotic_points_worsened",
            "fitted_points_worsened", "status",
        ),
        build=_response_build,
        replicate=_response_row,
    ),
    ScenarioKind.CONTAMINATION_COVARIATE: ScenarioHandler(
        parameters={
            "beta": _REQUIRED,
            "domain_lower": _REQUIRED,
            "domain_upper": _REQUIRED,
            "error_sd": _REQUIRED,
            "deployment_direction": None,
            "deployment_prob": 0.0,
            "noise_sd": 1.0,
            "b": _REQUIRED,
            "p": _REQUIRED,
            "lower": None,
            "upper": None,
            "n": _REQUIRED,
            "samples": 100_000,
        },
        columns=(
            "n", "coefficient_error", "consistent", "condition_holds", "lower_threshold",
            "upper_threshold", "loss_algorithmic", "loss_safeguarded", "difference",
            "difference_half_width", "status",
        ),
        build=_covariate_build,
        replicate=_covariate_row,
    ),
}


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario file: parameters, sweep and experiment controls."""

    scenario: ScenarioKind
    parameters: dict[str, Any]
    seed: int
    replications: int = 1
    sweep: tuple[tuple[str, tuple[Any, ...]], ...] = ()
    output_path: str = "results"
    name: str = ""
    numerics: NumericSettings = field(default_factory=NumericSettings.from_environment)

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "ScenarioConfig":
        errors = []
        unknown = set(data) - CONFIG_FIELDS
        errors.extend(f"{key}: unknown field" for key in sorted(unknown))
        scenario = data.get("scenario")
        try:
            kind = ScenarioKind(scenario)
        except ValueError:
            errors.append(f"scenario: expected one of {ScenarioKind.values()}, got {scenario!r}")
            kind = None
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            errors.append(f"seed: must be a 64-bit unsigned integer, got {seed!r}")
        replications = data.get("replications", 1)
        if isinstance(replications, bool) or not isinstance(replications, int):
            errors.append(f"replications: must be an integer, got {replications!r}")
        elif replications < 1:
            errors.append("replications must be ≥ 1")
        parameters = data.get("parameters", {})
        if not isinstance(parameters, dict):
            errors.append("parameters: must be a table")
            parameters = {}
        sweep = data.get("sweep", {})
        if not isinstance(sweep, dict):
            errors.append("sweep: must be a table of value lists")
            sweep = {}
        for key, values in sweep.items():
            if not isinstance(values, list) or not values:
                errors.append(f"sweep.{key}: must be a nonempty list")
        output = data.get("output", get_simulation_config().output_dir)
        if not isinstance(output, str):
            errors.append(f"output: must be a path string, got {output!r}")
        numerics = NumericSettings.from_dict(data, errors)
        if errors:
            raise ConfigurationError("invalid scenario config:\n  " + "\n  ".join(errors))
        return cls(
            scenario=kind,
            parameters=dict(parameters),
            seed=seed,
            replications=replications,
            sweep=tuple((key, tuple(values)) for key, values in sweep.items()),
            output_path=output,
            name=name or kind.value,
            numerics=numerics,
        )

    @classmethod
    def from_toml(cls, text: str, name: str = "") -> "ScenarioConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"scenario config is not valid TOML: {exc}") from None
        return cls.from_dict(data, name)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read scenario config {path}: {exc}") from None
        return cls.from_toml(text, path.stem)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        replications: Optional[int] = None,
        output_path: Optional[str] = None,
    ) -> "ScenarioConfig":
        if replications is not None and replications < 1:
            raise ConfigurationError("replications must be ≥ 1")
        if seed is not None and not 0 <= seed < 2**64:
            raise ConfigurationError(f"seed: must be a 64-bit unsigned integer, got {seed}")
        return replace(
            self,
            seed=self.seed if seed is None else seed,
            replications=self.replications if replications is None else replications,
            output_path=self.output_path if output_path is None else output_path,
        )

    def points(self) -> list[dict[str, Any]]:
        """Parameter sets of every sweep point, defaults filled in."""
        handler = SCENARIOS[self.scenario]
        base = {k: v for k, v in handler.parameters.items()}
        base.update(self.parameters)
        names = [name for name, _ in self.sweep]
        combos = itertools.product(*(values for _, values in self.sweep)) if names else [()]
        return [{**base, **dict(zip(names, combo))} for combo in combos]

    def echo(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "seed": self.seed,
            "replications": self.replications,
            "output": self.output_path,
            "parameters": self.parameters,
            "sweep": {name: list(values) for name, values in self.sweep},
            **self.numerics.echo(),
        }


def validate(config: ScenarioConfig) -> list[Any]:
    """Build every sweep point's setup; all problems are reported together.

    Raises:
        ConfigurationError: with one line per offending field.
    """
    handler = SCENARIOS[config.scenario]
    errors = []
    for key in list(config.parameters) + [name for name, _ in config.sweep]:
        if key not in handler.parameters:
            errors.append(f"parameters.{key}: unknown parameter for {config.scenario.value}")
    setups = []
    if not errors:
        for index, params in enumerate(config.points()):
            missing = [k for k, v in params.items() if v is _REQUIRED]
            if missing:
                errors.extend(f"parameters.{k}: required" for k in missing)
                break
            try:
                setups.append(handler.build(params, config.numerics))
            except (GuardrailSimError, TypeError, ValueError, KeyError) as exc:
                errors.append(f"sweep point {index}: {exc}")
    if errors:
        raise ConfigurationError("invalid scenario config:\n  " + "\n  ".join(errors))
    return setups


# --------------------------------------------------------------------------- output


def format_value(value: Any) -> str:
    """Locale-independent text: shortest round-trip floats, ``true``/``false``, empty for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def to_csv(rows: list[dict], columns: tuple[str, ...]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buffer.getvalue()


@dataclass(frozen=True)
class ColumnSummary:
    column: str
    rows: int
    valid: int
    mean: float
    half_width: float


def _numeric(value: Any) -> Optional[float]:
    if value is None or isinstance(value, str):
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def summarize(
    rows: list[dict], columns: tuple[str, ...], confidence: float = DEFAULT_CONFIDENCE
) -> list[ColumnSummary]:
    """Mean over valid (finite) rows and its CLT half-width for every numeric column."""
    summary = []
    for column in columns:
        if column in INDEX_COLUMNS:
            continue
        raw = [row.get(column) for row in rows]
        if any(isinstance(v, str) for v in raw):
            continue
        values = np.array([v for v in map(_numeric, raw) if v is not None])
        if values.size == 0:
            summary.append(ColumnSummary(column, len(rows), 0, math.nan, math.nan))
            continue
        half = (
            z_value(confidence) * float(values.std(ddof=1)) / math.sqrt(values.size)
            if values.size > 1
            else math.nan
        )
        summary.append(
            ColumnSummary(column, len(rows), int(values.size), float(values.mean()), half)
        )
    return summary


def status_counts(rows: list[dict]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for row in rows:
        status = str(row.get("status", "ok"))
        counts[status] = counts.get(status, 0) + 1
    return dict(sorted(counts.items()))


def verdict_counts(rows: list[dict]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {}
    for row in rows:
        for key, value in row.items():
            if key.endswith("_verdict") or key == "condition_holds":
                label = format_value(value) or "undefined"
                counts.setdefault(key, {})
                counts[key][label] = counts[key].get(label, 0) + 1
    return counts


def format_summary(summary: list[ColumnSummary]) -> str:
    lines = [f"{'column':<34}{'rows':>8}{'valid':>8}{'mean':>16}{'ci':>14}"]
    for s in summary:
        lines.append(f"{s.column:<34}{s.rows:>8}{s.valid:>8}{s.mean:>16.6g}{s.half_width:>14.4g}")
    return "\n".join(lines)


# --------------------------------------------------------------------------- run


@dataclass
class RunResult:
    config: ScenarioConfig
    columns: tuple[str, ...]
    rows: list[dict]
    summary: list[ColumnSummary]
    manifest: dict
    csv_text: str
    series_text: Optional[str] = None
    paths: dict[str, str] = field(default_factory=dict)


def _version() -> str:
    from mcp_guardrails import __version__

    return __version__


def execute(config: ScenarioConfig, threads: int = 1) -> RunResult:
    """Run every replication of every sweep point and collect rows in order (no file output)."""
    if threads < 1:
        raise ArgumentError(f"threads must be at least 1, got {threads}")
    setups = validate(config)
    handler = SCENARIOS[config.scenario]
    points = config.points()
    tasks = [(i, r) for i in range(len(setups)) for r in range(config.replications)]
    started = datetime.now(timezone.utc)
    logger.info(
        f"running {config.scenario.value}: seed={config.seed}, {len(setups)} sweep points "
        f"x {config.replications} replications on {threads} threads"
    )

    def task(item: tuple[int, int]) -> dict:
        i, r = item
        stream = RngStream(config.seed, (i, r))
        row = {"sweep_index": i, "replication": r}
        try:
            row.update(handler.replicate(setups[i], stream))
        except ROW_ERRORS as exc:
            logger.warning(f"replication ({i}, {r}) recorded as {_status(exc)}: {exc}")
            row["status"] = _status(exc)
        for name, _ in config.sweep:
            row.setdefault(name, points[i][name])
        return row

    if threads > 1 and len(tasks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
            rows = list(executor.map(task, tasks))
    else:
        rows = [task(t) for t in tasks]

    sweep_columns = tuple(name for name, _ in config.sweep if name not in handler.columns)
    columns = INDEX_COLUMNS + sweep_columns + handler.columns
    series_text = None
    if handler.series is not None:
        series_rows = []
        for i, setup in enumerate(setups):
            for entry in handler.series(setup, RngStream(config.seed, (i, 0))):
                series_rows.append({"sweep_index": i, **entry})
        series_text = to_csv(series_rows, ("sweep_index",) + handler.series_columns)

    summary = summarize(rows, columns, config.numerics.confidence)
    finished = datetime.now(timezone.utc)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool_version": _version(),
        "scenario": config.scenario.value,
        "seed": config.seed,
        "started_at": started.isoformat(),
        "finished_at": finished.isoformat(),
        "rows": len(rows),
        "columns": list(columns),
        "status": status_counts(rows),
        "verdicts": verdict_counts(rows),
        "config": config.echo(),
    }
    return RunResult(config, columns, rows, summary, manifest, to_csv(rows, columns), series_text)


def _toml_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _toml_safe(v) for k, v in value.items() if v is not None}
    if isinstance(value, (list, tuple)):
        return [_toml_safe(v) for v in value if v is not None]
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def write_outputs(result: RunResult, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Write the CSV, the optional series CSV and the TOML manifest."""
    directory = Path(out_dir if out_dir is not None else result.config.output_path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{result.config.name}.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as handle:
            handle.write(result.csv_text)
        paths = {"csv": str(csv_path)}
        if result.series_text is not None:
            series_path = directory / f"{result.config.name}.series.csv"
            with open(series_path, "w", encoding="utf-8", newline="") as handle:
                handle.write(result.series_text)
            paths["series"] = str(series_path)
        manifest_path = directory / f"{result.config.name}.manifest.toml"
        manifest = dict(result.manifest, files=dict(paths))
        with open(manifest_path, "wb") as handle:
            tomli_w.dump(_toml_safe(manifest), handle)
        paths["manifest"] = str(manifest_path)
    except OSError as exc:
        raise ConfigurationError(f"cannot write results to {directory}: {exc}") from None
    result.paths = paths
    logger.info(f"wrote {len(result.rows)} rows to {csv_path}")
    return result


def run(
    config: ScenarioConfig,
    out_dir: Optional[Union[str, Path]] = None,
    threads: int = 1,
) -> RunResult:
    """Validate, execute and write one scenario config."""
    return write_outputs(execute(config, threads), out_dir)
