import argparse
import logging
import sys
from typing import Optional, Sequence

from .errors import GuardrailSimError
from .mcp_env import TransportType, get_mcp_config, get_simulation_config
from .runner import ScenarioConfig, format_summary, run
from .verify import Suite, run_suite

logger = logging.getLogger("mcp-guardrails")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardrails-mcp",
        description="Simulate human guardrails on algorithmic decisions.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run a scenario config and write CSV + manifest")
    run_cmd.add_argument("--config", required=True, help="scenario TOML file")
    run_cmd.add_argument(
        "--seed", type=lambda s: int(s, 0), help="root seed (overrides env and file)"
    )
    run_cmd.add_argument("--replications", type=int, help="replications per sweep point")
    run_cmd.add_argument("--out", help="output directory")
    run_cmd.add_argument("--threads", type=int, help="worker threads (speed only)")

    verify_cmd = commands.add_parser("verify", help="run the acceptance checks")
    verify_cmd.add_argument("suite", nargs="?", default=Suite.ALL.value, help="suite name")
    verify_cmd.add_argument("--seed", type=lambda s: int(s, 0), default=0, help="root seed")
    verify_cmd.add_argument("--threads", type=int, help="worker threads (speed only)")

    commands.add_parser("serve", help="start the MCP server")
    return parser


def _run(args: argparse.Namespace) -> int:
    sim = get_simulation_config()
    seed = args.seed if args.seed is not None else sim.seed
    threads = args.threads if args.threads is not None else sim.threads
    config = ScenarioConfig.load(args.config).with_overrides(
        seed=seed, replications=args.replications, output_path=args.out
    )
    result = run(config, threads=threads)
    print(format_summary(result.summary))
    for label in ("status", "verdicts"):
        if result.manifest[label]:
            print(f"{label}: {result.manifest[label]}")
    for kind, path in result.paths.items():
        print(f"{kind}: {path}")
    return 0


def _verify(args: argparse.Namespace) -> int:
    threads = args.threads if args.threads is not None else get_simulation_config().threads
    report = run_suite(args.suite, seed=args.seed, threads=threads)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 1


def serve() -> None:
    from .mcp_server import mcp

    mcp_config = get_mcp_config()
    transport = mcp_config.server_transport

    # HTTP and SSE transports bind to a host and port; stdio needs neither
    if transport in (TransportType.HTTP.value, TransportType.SSE.value):
        mcp.run(transport=transport, host=mcp_config.bind_host, port=mcp_config.bind_port)
    else:
        mcp.run(transport=transport)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "serve":
        serve()
        return 0

    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    try:
        if args.command == "run":
            return _run(args)
        return _verify(args)
    except (GuardrailSimError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
