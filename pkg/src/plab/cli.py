"""Command-line entry point.

    plab <kind> [--config FILE] [--seed N] [--out DIR] [section.key=value ...]

Kinds: train, attack, channel-sweep, transfer, recovery-window,
instability.  File values override defaults, command-line pairs override
the file, and --seed/--out are shorthand for experiment.seed /
experiment.out.  ``PLAB_THREADS`` caps the evaluation worker pool.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import sys

from plab import config as cfgmod
from plab.config import EXPERIMENT_KINDS
from plab.errors import ConfigError, PlabError
from plab.runner import run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plab",
        description="perturbation-channel robustness laboratory",
    )
    parser.add_argument("kind", help="experiment kind: " + ", ".join(EXPERIMENT_KINDS))
    parser.add_argument("--config", help="config file (key = value with [section] headers)")
    parser.add_argument("--seed", type=int, help="override experiment.seed")
    parser.add_argument("--out", help="override experiment.out")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    overrides = []
    for extra in extras:
        if extra.startswith("-") or "=" not in extra:
            print(f"plab: unrecognized argument {extra!r}", file=sys.stderr)
            return 2
        overrides.append(extra)
    try:
        file_cfg = cfgmod.load_config(args.config) if args.config else {}
        cfg = cfgmod.resolve(file_cfg, overrides)
        cfg["experiment.kind"] = args.kind
        if args.seed is not None:
            cfg["experiment.seed"] = str(args.seed)
        if args.out is not None:
            cfg["experiment.out"] = args.out
        run_experiment(cfg)
        return 0
    except ConfigError as exc:
        print(f"plab: config error: {exc}", file=sys.stderr)
        return 2
    except PlabError as exc:
        print(f"plab: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"plab: i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
