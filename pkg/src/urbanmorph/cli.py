"""Command-line entry point: one subcommand per pipeline stage plus ``run``.

Configuration comes from an optional flat ``key = value`` file; every config
key can be overridden by a same-named flag (underscores become dashes).
Exit codes: 0 success, 1 computation error, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .errors import ConfigError, FormatError, UrbanMorphError
from .pipeline import (
    STAGES,
    PipelineConfig,
    build_config,
    parse_config_file,
    run_all,
)

log = logging.getLogger("urbanmorph")

_SUBCOMMANDS = [
    "synth",
    "rasterize-points",
    "ndsm",
    "resample",
    "tile",
    "train",
    "predict",
    "lod1",
    "ucp",
    "validate",
    "report",
    "run",
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "out":
            continue  # --out is a global flag
        parser.add_argument(flag, dest=f.name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urbanmorph",
        description=(
            "Building-height regression from coarse rasters and gridded "
            "urban canopy parameters."
        ),
    )
    parser.add_argument("--config", default=None, help="flat key=value config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", default=None, help="override the config seed")
    parser.add_argument("--verbose", action="store_true", help="chatty logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        _add_config_flags(p)
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {
        f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)
    }
    if args.out is not None:
        overrides["out"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    return build_config(file_values, overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    stage = args.command
    try:
        cfg = _config_from_args(args)
        if stage == "run":
            outputs = run_all(cfg)
        else:
            outputs = STAGES[stage](cfg)
    except (ConfigError, FormatError) as exc:
        print(f"ERROR stage={stage}: {exc}", file=sys.stderr)
        return 2
    except UrbanMorphError as exc:
        print(f"ERROR stage={stage}: {exc}", file=sys.stderr)
        return 1
    for key, path in outputs.items():
        log.info("%s -> %s", key, path)
        print(f"{key}\t{path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
