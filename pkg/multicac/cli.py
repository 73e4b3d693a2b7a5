from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import List, Optional

from multicac.config import get_log_level, load_environment
from multicac.constants import EXIT_CONFIG
from multicac.services import experiment, verify


def _configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)
    logging.captureWarnings(True)


def _epsilons(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multicac", description="Conserved multi-component Allen-Cahn experiments")
    parser.add_argument("--log-level", default=None, help="overrides MCAC_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, required=True, help="experiment file ([grid] [model] [solver] [output])")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config entry; repeatable")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: MCAC_OUT_DIR)")

    run = sub.add_parser("run", help="run one experiment")
    with_config(run)
    run.add_argument("--restart", type=Path, default=None, help="resume from an MCAC1 checkpoint")

    ver = sub.add_parser("verify", help="run a property suite")
    ver.add_argument("suite", nargs="?", default="all", choices=verify.SUITES + ("all",))

    sweep = sub.add_parser("sweep-epsilon", help="rerun an experiment across regularization strengths")
    with_config(sweep)
    sweep.add_argument("--epsilons", type=_epsilons, default=[1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                       help="comma-separated list, e.g. 1e-1,1e-2,1e-3")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_environment()
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level.upper() if args.log_level else get_log_level())

    if args.command == "run":
        return experiment.cmd_run(args.config, args.overrides, args.out, args.restart)
    if args.command == "verify":
        return verify.cmd_verify(args.suite)
    if args.command == "sweep-epsilon":
        return experiment.cmd_sweep_epsilon(args.config, args.epsilons, args.overrides, args.out)
    return EXIT_CONFIG
