"""Environment configuration for the guardrail simulation toolkit.

This module handles all environment variable configuration with sensible defaults
and type conversion.
"""

from dataclasses import dataclass
import os
from typing import Optional
from enum import Enum
import logging

logger = logging.getLogger("mcp-guardrails")


class TransportType(str, Enum):
    """Supported MCP server transport types."""

    STDIO = "stdio"
    HTTP = "http"
    SSE = "sse"

    @classmethod
    def values(cls) -> list[str]:
        """Get all valid transport values."""
        return [transport.value for transport in cls]


def _int_var(name: str, default: str, minimum: int) -> int:
    raw = os.getenv(name, default)
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from None
    if value < minimum:
        raise ValueError(f"{name} must be at least {minimum}, got {value}")
    return value


def _float_var(name: str, default: str) -> float:
    raw = os.getenv(name, default)
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{name} must be a number, got {raw!r}") from None


@dataclass
class SimulationConfig:
    """Configuration for simulation runs.

    All variables are optional; command-line flags take precedence over them.

    Optional environment variables (with defaults):
        GUARDRAILS_SEED: Root seed overriding the scenario file's seed (default: unset)
        GUARDRAILS_CONFIDENCE: Confidence level of reported intervals (default: 0.99)
        GUARDRAILS_THREADS: Worker threads for replications (default: 1)
        GUARDRAILS_OUTPUT_DIR: Directory for CSV and manifest files (default: results)
        GUARDRAILS_CHUNK_SIZE: Monte Carlo draws per chunk (default: 65536)
        GUARDRAILS_QUADRATURE_TOL: Absolute and relative quadrature tolerance (default: 1e-8)
    """

    @property
    def seed(self) -> Optional[int]:
        raw = os.getenv("GUARDRAILS_SEED")
        if raw is None or raw == "":
            return None
        try:
            seed = int(raw, 0)
        except ValueError:
            raise ValueError(f"GUARDRAILS_SEED must be an integer, got {raw!r}") from None
        if not 0 <= seed < 2**64:
            raise ValueError(f"GUARDRAILS_SEED must be a 64-bit unsigned integer, got {seed}")
        return seed

    @property
    def confidence(self) -> float:
        value = _float_var("GUARDRAILS_CONFIDENCE", "0.99")
        if not 0.0 < value < 1.0:
            raise ValueError(f"GUARDRAILS_CONFIDENCE must lie in (0, 1), got {value}")
        return value

    @property
    def threads(self) -> int:
        return _int_var("GUARDRAILS_THREADS", "1", 1)

    @property
    def output_dir(self) -> str:
        return os.getenv("GUARDRAILS_OUTPUT_DIR", "results")

    @property
    def chunk_size(self) -> int:
        return _int_var("GUARDRAILS_CHUNK_SIZE", "65536", 1)

    @property
    def quadrature_tol(self) -> float:
        value = _float_var("GUARDRAILS_QUADRATURE_TOL", "1e-8")
        if not value > 0:
            raise ValueError(f"GUARDRAILS_QUADRATURE_TOL must be positive, got {value}")
        return value


_SIMULATION_CONFIG_INSTANCE = None


def get_simulation_config() -> SimulationConfig:
    """
    Gets the singleton instance of SimulationConfig.
    Instantiates it on the first call.
    """
    global _SIMULATION_CONFIG_INSTANCE
    if _SIMULATION_CONFIG_INSTANCE is None:
        _SIMULATION_CONFIG_INSTANCE = SimulationConfig()
    return _SIMULATION_CONFIG_INSTANCE


@dataclass
class MCPServerConfig:
    """Configuration for MCP server-level settings.

    Optional environment variables (with defaults):
        GUARDRAILS_MCP_SERVER_TRANSPORT: "stdio", "http", or "sse" (default: stdio)
        GUARDRAILS_MCP_BIND_HOST: Bind host for HTTP/SSE (default: 127.0.0.1)
        GUARDRAILS_MCP_BIND_PORT: Bind port for HTTP/SSE (default: 8000)
        GUARDRAILS_MCP_RUN_TIMEOUT: Seconds a simulation tool call may run (default: 600)
    """

    @property
    def server_transport(self) -> str:
        transport = os.getenv(
            "GUARDRAILS_MCP_SERVER_TRANSPORT", TransportType.STDIO.value
        ).lower()
        if transport not in TransportType.values():
            valid_options = ", ".join(f'"{t}"' for t in TransportType.values())
            raise ValueError(
                f"Invalid transport '{transport}'. Valid options: {valid_options}"
            )
        return transport

    @property
    def bind_host(self) -> str:
        return os.getenv("GUARDRAILS_MCP_BIND_HOST", "127.0.0.1")

    @property
    def bind_port(self) -> int:
        return int(os.getenv("GUARDRAILS_MCP_BIND_PORT", "8000"))

    @property
    def run_timeout(self) -> int:
        return int(os.getenv("GUARDRAILS_MCP_RUN_TIMEOUT", "600"))


_MCP_CONFIG_INSTANCE = None


def get_mcp_config() -> MCPServerConfig:
    """Gets the singleton instance of MCPServerConfig."""
    global _MCP_CONFIG_INSTANCE
    if _MCP_CONFIG_INSTANCE is None:
        _MCP_CONFIG_INSTANCE = MCPServerConfig()
    return _MCP_CONFIG_INSTANCE
