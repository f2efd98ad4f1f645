"""Command-line front end.

Subcommands: solve, compare, sweep, qsvt-check.  Global flags --config,
--out, --seed, --workers override the corresponding file fields.  Exit
codes: 0 success, 1 usage/config error, 2 solver failure, 3 partial sweep.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config_file, validate_config
from .experiments import run_compare, run_qsvt_check, run_solve, run_sweep

_COMMANDS = {
    "solve": run_solve,
    "compare": run_compare,
    "sweep": run_sweep,
    "qsvt-check": run_qsvt_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbsqp",
        description="Barrier SQP solver with exact, noisy, or simulated-quantum "
                    "Schur-complement steps",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML configuration file")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--workers", type=int, help="worker pool size for sweeps")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_config_file(args.config)
        cfg = validate_config(data)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if cfg.workers < 1:
            raise ConfigError("workers: must be >= 1")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        code, result = _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver failures: singularity, budget, spectrum
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    summary = result.get("summary", {})
    for key, value in summary.items():
        if key != "failures":
            print(f"{key}: {value}")
    if code == 2:
        print("solver failure: run did not reach a successful termination",
              file=sys.stderr)
    if code == 3:
        print(f"partial sweep: {len(summary.get('failures', []))} cell(s) failed",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
