"""Command-line entry point.

Exit codes: 0 on success, 1 on configuration errors (the message names the
offending field), 2 on runtime aborts.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ElastimapError
from .config import ConfigError, load_config
from .runner import cmd_beta_study, cmd_cluster_study, cmd_run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastimap",
        description="Map the deformability of a synthetic elastic surface by active poking.",
    )
    parser.add_argument("--verbose", action="store_true", help="log per-interaction progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument(
            "--format",
            choices=("csv", "pgm", "both"),
            default="both",
            help="field file format(s) to write",
        )

    common(sub.add_parser("run", help="run the full exploration loop"))
    common(sub.add_parser("beta-study", help="recovery study over the configured levels"))
    common(sub.add_parser("cluster-study", help="residual study over cluster sizes"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(message)s")

    try:
        config = load_config(args.config).with_seed(args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "run":
            report = cmd_run(config, args.out, fmt=args.format)
            print(
                f"{report.scenario_id}: {report.interactions} interactions, "
                f"accuracy {report.segmentation_accuracy:.3f}, "
                f"{report.region_count} region(s), outputs in {args.out}"
            )
        elif args.command == "beta-study":
            rows = cmd_beta_study(config, args.out)
            print(f"recovery study: {len(rows)} rows written to {args.out}")
        else:
            rows = cmd_cluster_study(config, args.out)
            print(f"cluster study: {len(rows)} rows written to {args.out}")
    except ElastimapError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
