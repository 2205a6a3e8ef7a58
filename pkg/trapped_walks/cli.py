"""Command-line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 for an
unreadable or invalid config, 3 for any other lab error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .bridge import format_regime_table, regime
from .catalog import Catalog
from .errors import ConfigError, InvalidLawError, LabError
from .models import MODE_SUITES, SUITE_MODES, ExperimentConfig
from .offspring import OffspringLaw
from .pipeline import VerificationPipeline
from .reporting import PACKAGE_VERSION, summary_lines, write_reports
from .validator import build_config, read_config_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUITE_COMMANDS = ("verify-analytics", "speed", "einstein", "coupling", "necessity")
CLT_SUITES = tuple(SUITE_MODES)


def _threads(value: str) -> Union[int, str]:
    if value == "auto":
        return value
    try:
        threads = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'") from exc
    if threads < 1:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'")
    return threads


def _add_run_flags(parser: argparse.ArgumentParser, *, positional: bool = False) -> None:
    if positional:
        parser.add_argument("config_file", nargs="?", type=Path, help="TOML (or YAML) experiment config")
    parser.add_argument("--config", dest="config_path", type=Path, help="TOML (or YAML) experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=_threads, help="worker processes, or 'auto'")
    parser.add_argument("--out", dest="output", help="output directory")


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="trapped-walks",
        description="Simulation and verification suites for biased walks among random traps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {PACKAGE_VERSION}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(commands.add_parser("run", help="run the suite named in the config"), positional=True)
    for suite in SUITE_COMMANDS:
        _add_run_flags(commands.add_parser(suite, help=f"run the {suite} suite"))
    clt = commands.add_parser("clt", help="run a CLT suite")
    _add_run_flags(clt)
    clt.add_argument("--mode", choices=sorted(MODE_SUITES), help="override the CLT mode of the config")

    regime_parser = commands.add_parser("print-regime", help="classify (law, beta) into the limit-theorem regimes")
    source = regime_parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--law", help="builtin law name")
    source.add_argument("--pmf", help='inline pmf as JSON, e.g. \'{"0": 0.6, "2": 0.4}\'')
    regime_parser.add_argument("--beta", type=float, required=True)
    regime_parser.add_argument("--delta", type=float, default=0.5)
    return parser.parse_args(argv)


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config_for(args: argparse.Namespace) -> ExperimentConfig:
    path = getattr(args, "config_file", None) or args.config_path
    if path is None:
        raise ConfigError("No config file given", ["pass a config path or --config"])
    payload = read_config_file(path)
    overrides: Dict[str, Any] = {"seed": args.seed, "threads": args.threads, "output": args.output}
    if args.command in SUITE_COMMANDS:
        overrides["suite"] = args.command
    elif args.command == "clt":
        if args.mode is not None:
            overrides["suite"] = MODE_SUITES[args.mode]
            overrides["mode"] = args.mode
        elif payload.get("suite") not in CLT_SUITES:
            raise ConfigError(
                "The clt command needs a CLT suite",
                [f"suite: expected one of {', '.join(CLT_SUITES)}, got {payload.get('suite')!r}"],
            )
    return build_config(payload, overrides)


def _print_regime(args: argparse.Namespace) -> int:
    if args.law is not None:
        law = Catalog().law(args.law)
    else:
        try:
            pmf = json.loads(args.pmf)
        except json.JSONDecodeError as exc:
            raise InvalidLawError(f"--pmf is not valid JSON: {exc}") from exc
        law = OffspringLaw.from_json({"pmf": pmf})
    if not law.subcritical:
        raise InvalidLawError(f"Offspring law is not subcritical (mu = {law.mean_mu}).")
    print(format_regime_table(regime(law, args.beta, args.delta)))
    return EXIT_OK


def _run_suite(args: argparse.Namespace) -> int:
    config = _config_for(args)
    result = asyncio.run(VerificationPipeline(config).run())
    for path in write_reports(result, config.output):
        logger.info("Wrote %s", path)
    for line in summary_lines(result):
        print(line)
    return EXIT_OK if result.passed else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    _configure_logging(args.verbose)
    try:
        if args.command == "print-regime":
            return _print_regime(args)
        return _run_suite(args)
    except (ConfigError, InvalidLawError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
