"""Command-line entry point: ``cluelab run|sweep-k|sweep-alpha``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DomainError, InputError, NumericError
from .harness import ExperimentConfig, emit_report, render_report, run_experiment, sweep_alpha, sweep_mc_samples

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("cluelab")


def _number_list(kind):
    def parse(text):
        try:
            values = [kind(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
        if not values:
            raise argparse.ArgumentTypeError("list is empty")
        return values
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON file with ExperimentConfig fields")
    common.add_argument("--out", type=Path, help="report path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="report format (default: from --out suffix, else json)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--data-dir", type=Path, help="base directory for relative csv dataset paths")
    common.add_argument("--timing", action="store_true", help="include time_per_epoch (breaks byte-determinism)")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = argparse.ArgumentParser(prog="cluelab", description="Train and evaluate uncertainty-calibrated MLPs.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one experiment")
    k = sub.add_parser("sweep-k", parents=[common], help="train once, evaluate at several MC pass counts")
    k.add_argument("--ks", type=_number_list(int), default=[1, 5, 10, 20])
    a = sub.add_parser("sweep-alpha", parents=[common], help="one clue run per alpha")
    a.add_argument("--alphas", type=_number_list(float), default=[0.0, 0.25, 0.5, 0.75, 1.0])
    return parser


def _load_config(args) -> ExperimentConfig:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc.strerror or exc}") from None
    config = ExperimentConfig.from_json(text)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _execute(args) -> int:
    config = _load_config(args)
    log.info("config %s, method %s, seed %d", config.digest(), config.method, config.seed)
    if args.command == "run":
        results = [run_experiment(config, args.data_dir)]
    elif args.command == "sweep-k":
        results = sweep_mc_samples(config, args.ks, args.data_dir)
    else:
        results = sweep_alpha(config, args.alphas, args.data_dir)
    fmt = args.format or ("csv" if args.out is not None and args.out.suffix == ".csv" else "json")
    if args.out is None:
        sys.stdout.write(render_report(results, fmt, args.timing))
    else:
        try:
            emit_report(results, fmt, args.out, args.timing)
        except OSError as exc:
            raise InputError(f"cannot write report {args.out}: {exc.strerror or exc}") from None
        log.info("wrote %d row(s) to %s", len(results), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _execute(args)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ConfigError, DomainError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric abort: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
