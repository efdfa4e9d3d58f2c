"""Command-line driver for the experiment pipeline.

Verbs: generate, train, eval-offline, eval-online, ablate, compare.
Exit codes: 0 success, 2 invalid config, 3 missing artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .errors import ConfigInvalid, MissingArtifact
from .experiment import (
    ABLATION_AXES,
    load_config,
    run_ablate,
    run_compare,
    run_eval,
    run_generate,
    run_train,
)

EXIT_CONFIG = 2
EXIT_MISSING = 3


def _add_common(parser: argparse.ArgumentParser, many_configs: bool = False) -> None:
    if many_configs:
        parser.add_argument("--config", required=True, nargs="+", help="experiment config JSON file(s)")
    else:
        parser.add_argument("--config", required=True, help="experiment config JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="override output_dir")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for generation")
    parser.add_argument(
        "--reference-path",
        action="store_true",
        help="force deterministic single-thread execution",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "eval-offline", "eval-online"):
        _add_common(sub.add_parser(name))
    ablate = sub.add_parser("ablate")
    _add_common(ablate)
    ablate.add_argument("--axis", required=True, choices=ABLATION_AXES)
    ablate.add_argument("--values", required=True, type=int, nargs="+")
    compare = sub.add_parser("compare")
    _add_common(compare, many_configs=True)
    return parser


def _load(path: str, args) -> "ExperimentConfig":
    config = load_config(path)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, output_dir=args.out)
    return config


def main(argv: list[str] | None = None) -> int:
    from .runtime import tune_runtime

    tune_runtime()
    args = build_parser().parse_args(argv)
    threads = 1 if args.reference_path else args.threads
    try:
        paths = args.config if isinstance(args.config, list) else [args.config]
        configs = [_load(p, args) for p in paths]
        config = configs[0]
        if args.command == "generate":
            print(run_generate(config, threads=threads))
        elif args.command == "train":
            print(run_train(config))
        elif args.command == "eval-offline":
            print(run_eval(config, "offline"))
        elif args.command == "eval-online":
            print(run_eval(config, "online"))
        elif args.command == "ablate":
            print(run_ablate(config, args.axis, args.values, threads=threads))
        elif args.command == "compare":
            print(run_compare(configs))
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return 0


if __name__ == "__main__":
    sys.exit(main())
