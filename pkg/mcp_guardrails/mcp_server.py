import atexit
import concurrent.futures
import logging
import math
import uuid
from dataclasses import asdict
from typing import Any, Dict, List, Optional

from cachetools import TTLCache
from dotenv import load_dotenv
from fastmcp import FastMCP
from fastmcp.exceptions import ToolError
from fastmcp.prompts import Prompt
from starlette.requests import Request
from starlette.responses import PlainTextResponse

from mcp_guardrails import competition, framework, misspec, runner, verify
from mcp_guardrails.errors import GuardrailSimError, HypothesisViolatedError
from mcp_guardrails.mcp_env import get_mcp_config, get_simulation_config
from mcp_guardrails.prompts import GUARDRAILS_PROMPT

MCP_SERVER_NAME = "mcp-guardrails"

logging.basicConfig(
    level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(MCP_SERVER_NAME)

SIMULATION_EXECUTOR = concurrent.futures.ThreadPoolExecutor(max_workers=4)
atexit.register(lambda: SIMULATION_EXECUTOR.shutdown(wait=True))

load_dotenv()

mcp = FastMCP(name=MCP_SERVER_NAME)


@mcp.custom_route("/health", methods=["GET"])
async def health_check(request: Request) -> PlainTextResponse:
    """Health check endpoint for monitoring server status.

    Returns OK when the simulation configuration in the environment is valid.
    """
    try:
        sim = get_simulation_config()
        threads, confidence = sim.threads, sim.confidence
        return PlainTextResponse(
            f"OK - {MCP_SERVER_NAME} {runner._version()} "
            f"(threads={threads}, confidence={confidence})"
        )
    except ValueError as e:
        return PlainTextResponse(f"ERROR - Invalid configuration: {e}", status_code=503)


def _json_value(value: Any) -> Any:
    """Non-finite floats become None; numpy scalars become Python scalars."""
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _json_row(row: Dict[str, Any]) -> Dict[str, Any]:
    return {key: _json_value(value) for key, value in row.items()}


def _submit(fn, *args):
    """Run ``fn`` on the simulation executor, bounded by the configured timeout."""
    future = SIMULATION_EXECUTOR.submit(fn, *args)
    timeout_secs = get_mcp_config().run_timeout
    try:
        return future.result(timeout=timeout_secs)
    except concurrent.futures.TimeoutError:
        logger.warning(f"{fn.__name__} timed out after {timeout_secs} seconds")
        future.cancel()
        raise ToolError(f"Simulation timed out after {timeout_secs} seconds")
    except GuardrailSimError as e:
        logger.error(f"{fn.__name__} failed: {e}")
        raise ToolError(str(e))


# Finished runs and their page tokens, kept for one hour
run_cache: TTLCache = TTLCache(maxsize=32, ttl=3600)
row_pagination_cache: TTLCache = TTLCache(maxsize=100, ttl=3600)


def create_page_token(run_id: str, end_idx: int) -> str:
    """Store the position of the next page and return its token."""
    token = str(uuid.uuid4())
    row_pagination_cache[token] = {"run_id": run_id, "start_idx": end_idx}
    return token


def get_paginated_rows(
    result: runner.RunResult, start_idx: int, page_size: int
) -> tuple[List[Dict[str, Any]], int, bool]:
    end_idx = min(start_idx + page_size, len(result.rows))
    page = [
        {column: _json_value(row.get(column)) for column in result.columns}
        for row in result.rows[start_idx:end_idx]
    ]
    return page, end_idx, end_idx < len(result.rows)


@mcp.tool
def run_scenario(
    config_toml: str,
    seed: Optional[int] = None,
    replications: Optional[int] = None,
) -> Dict[str, Any]:
    """Run a scenario config given as TOML text.

    Args:
        config_toml: The scenario file contents
        seed: Optional root seed overriding the config (and GUARDRAILS_SEED)
        replications: Optional replication count overriding the config

    Returns:
        A dictionary containing:
        - run_id: Id to page through the rows with get_run_rows
        - rows: Number of result rows
        - columns: The CSV column schema of the scenario
        - summary: Per-column rows, valid rows, mean and CI half-width
        - manifest: Seed, versions, timestamps and status and verdict counts
    """
    sim = get_simulation_config()
    env_seed = sim.seed
    try:
        config = runner.ScenarioConfig.from_toml(config_toml)
        config = config.with_overrides(
            seed=seed if seed is not None else env_seed, replications=replications
        )
    except GuardrailSimError as e:
        logger.error(f"Rejected scenario config: {e}")
        raise ToolError(str(e))

    logger.info(
        f"Running {config.scenario.value} scenario with seed={config.seed}, "
        f"replications={config.replications}"
    )
    result = _submit(runner.execute, config, sim.threads)
    run_id = str(uuid.uuid4())
    run_cache[run_id] = result
    return {
        "run_id": run_id,
        "rows": len(result.rows),
        "columns": list(result.columns),
        "summary": [_json_row(asdict(s)) for s in result.summary],
        "manifest": result.manifest,
    }


@mcp.tool
def get_run_rows(
    run_id: str,
    page_token: Optional[str] = None,
    page_size: int = 50,
) -> Dict[str, Any]:
    """Page through the rows of a finished run.

    Args:
        run_id: Id returned by run_scenario
        page_token: Token for pagination, obtained from a previous call
        page_size: Number of rows to return per page (default: 50)

    Returns:
        A dictionary containing:
        - rows: Rows of this page, keyed by column
        - next_page_token: Token for the next page, or None if no more pages
        - total_rows: Number of rows in the run
    """
    if page_size < 1:
        raise ToolError(f"page_size must be at least 1, got {page_size}")
    result = run_cache.get(run_id)
    if result is None:
        raise ToolError(f"Unknown or expired run id {run_id}")

    start_idx = 0
    if page_token and page_token in row_pagination_cache:
        cached_state = row_pagination_cache[page_token]
        if cached_state["run_id"] != run_id:
            logger.warning(
                f"Page token {page_token} is for a different run. "
                "Ignoring token and starting from beginning."
            )
        else:
            start_idx = cached_state["start_idx"]
            del row_pagination_cache[page_token]

    rows, end_idx, has_more = get_paginated_rows(result, start_idx, page_size)
    next_page_token = create_page_token(run_id, end_idx) if has_more else None
    logger.info(
        f"Returned {len(rows)} rows of run {run_id} (total: {len(result.rows)}), "
        f"next_page_token={next_page_token}"
    )
    return {"rows": rows, "next_page_token": next_page_token, "total_rows": len(result.rows)}


@mcp.tool
def verify_suite(suite: str = "all", seed: int = 0) -> Dict[str, Any]:
    """Run the acceptance checks of a suite (all, framework, competition, misspec, contamination)"""
    logger.info(f"Verifying suite {suite} with seed {seed}")
    report = _submit(verify.run_suite, suite, seed, get_simulation_config().threads)
    return {
        "suite": report.suite.value,
        "passed": report.passed,
        "lines": report.lines(),
        "criteria": [_json_row(asdict(r)) for r in report.results],
    }


@mcp.tool
def clip_decision(
    x_a: float, lower: Optional[float] = None, upper: Optional[float] = None
) -> float:
    """Clip an algorithmic decision to the human bounds; a missing bound is unbounded"""
    try:
        return framework.clip(
            x_a, -math.inf if lower is None else lower, math.inf if upper is None else upper
        )
    except GuardrailSimError as e:
        raise ToolError(str(e))


@mcp.tool
def competition_summary(
    alpha: float,
    beta: float,
    gamma: float,
    mu: float,
    sigma2: float = 1.0,
    rho: float = 0.0,
) -> Dict[str, Any]:
    """Limit algorithmic price, Nash and collusive prices and the price-matching threshold p_L
    of a linear-demand duopoly priced by a monopoly-model OLS fit."""
    try:
        params = competition.DuopolyParams(alpha, beta, gamma)
        hist = competition.PriceHistoryModel(mu, sigma2, rho)
        equilibria = competition.equilibrium_prices(params)
        summary = {
            "plim_price": competition.plim_price(params, hist),
            "nash": equilibria.nash,
            "collusive": equilibria.collusive,
            "p_L": None,
            "boundary": None,
            "note": None,
        }
        try:
            summary["p_L"] = competition.matching_threshold(params, hist)
            summary["boundary"] = competition.is_boundary_threshold(params, hist)
        except HypothesisViolatedError as e:
            summary["note"] = str(e)
        return summary
    except GuardrailSimError as e:
        logger.error(f"competition_summary failed: {e}")
        raise ToolError(str(e))


@mcp.tool
def misspec_condition(
    family: str, a: float, c: float, p_bar: float, n: int, b: float = 1.0
) -> Dict[str, Any]:
    """Improvement threshold on p_bar for the human interval guardrail over a linear pricer
    fitted to isoelastic or exponential demand on an n-interval price grid."""
    try:
        oracle = misspec.DemandOracle(family, a, b)
        cond = misspec.improvement_condition(oracle, misspec.GridExperiment(c, p_bar, n, 1, 0.0))
    except GuardrailSimError as e:
        logger.error(f"misspec_condition failed: {e}")
        raise ToolError(str(e))
    result = asdict(cond)
    result["family"] = cond.family.value
    result["interval"] = list(cond.interval)
    return result


def guardrails_initial_prompt() -> str:
    """This prompt helps users run guardrail simulations and read their results"""
    return GUARDRAILS_PROMPT


mcp.add_prompt(
    Prompt.from_function(
        guardrails_initial_prompt,
        name="guardrails_initial_prompt",
        description="This prompt helps users run guardrail simulations and read their results",
    )
)
