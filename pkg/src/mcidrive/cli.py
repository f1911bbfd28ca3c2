"""Command line entry point: ``mcidrive {synth,extract,report,train-eval}``.

Exit codes: 0 success, 1 pipeline error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from mcidrive.pipeline import PipelineConfig, PipelineError, extract, report, train_eval
from mcidrive.synth import CohortSpec, generate_cohort

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=default, help="unsigned 64-bit seed")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("--jobs", type=int, default=default, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcidrive", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", type=Path, help="cohort spec JSON (defaults when omitted)")
    _common(p, suppress=True)

    p = sub.add_parser("extract", help="streams -> features.csv")
    p.add_argument("data_dir", type=Path)
    _common(p, suppress=True)

    p = sub.add_parser("report", help="time-of-day and quarterly tables")
    p.add_argument("features", type=Path)
    _common(p, suppress=True)

    p = sub.add_parser("train-eval", help="train and evaluate the six model groups")
    p.add_argument("features", type=Path)
    p.add_argument("--group", type=int, action="append", choices=range(1, 7),
                   help="run only this group (repeatable)")
    p.add_argument("--group-split", action="store_true",
                   help="keep each participant's rows on one side of the split")
    _common(p, suppress=True)
    return parser


def _load_json(path: Path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from None


def load_config(args) -> PipelineConfig:
    try:
        config = PipelineConfig.from_dict(_load_json(args.config, "config")) if args.config else PipelineConfig()
        if args.seed is not None:
            config = replace(config, seed=args.seed, forest=replace(config.forest, seed=args.seed))
        if args.jobs is not None:
            config = replace(config, jobs=args.jobs, forest=replace(config.forest, n_jobs=args.jobs))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    return config


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args)
        out = args.out or Path(".")
        if args.command == "synth":
            try:
                spec = CohortSpec.from_dict(_load_json(args.spec, "spec")) if args.spec else CohortSpec()
                if args.seed is not None:
                    spec = replace(spec, seed=args.seed)
                    spec.validate()
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad cohort spec: {exc}") from None
            print(generate_cohort(spec, out, jobs=config.jobs))
        elif args.command == "extract":
            if not args.data_dir.is_dir():
                raise PipelineError(f"no trips extracted: {args.data_dir} is not a directory")
            print(extract(args.data_dir, out, config))
        elif args.command == "report":
            paths = report(args.features, out)
            with open(paths["time_of_day"], encoding="utf-8") as fh:
                sys.stdout.write(fh.read())
        elif args.command == "train-eval":
            if args.group_split:
                config = replace(config, group_by_participant=True)
            groups = sorted(set(args.group)) if args.group else range(1, 7)
            paths = train_eval(args.features, out, config, groups)
            sys.stdout.write(paths["table"].read_text(encoding="utf-8"))
    except UsageError as exc:
        print(f"mcidrive: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ValueError, OSError) as exc:
        print(f"mcidrive: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
