"""Command-line entry point: ``oddownscale <stage> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import MISSING, fields

from .features import FeatureError
from .geo import ZoningError
from .models import ConvergenceError, ModelError
from .pipeline import STAGES, ConfigError, MissingArtifactError, RunConfig, read_config_file, run_stage
from .tuning import TuningError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oddownscale", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    for f in fields(RunConfig):
        default = f.default if f.default is not MISSING else None
        # SUPPRESS keeps unset flags out of the namespace so the file can win
        common.add_argument(
            "--" + f.name.replace("_", "-"), dest=f.name, default=argparse.SUPPRESS,
            metavar=f.name.upper(), help=f"{f.metadata['help']} (default: {default!r})",
        )
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    return RunConfig.from_sources(file_values, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        outputs = run_stage(args.stage, cfg)
    except (ConfigError, MissingArtifactError, FileNotFoundError) as exc:
        print(f"oddownscale {args.stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ConvergenceError, FeatureError, ZoningError, TuningError, ValueError, OSError) as exc:
        print(f"oddownscale {args.stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in outputs:
        print(path)
    return EXIT_OK
