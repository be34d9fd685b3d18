"""Command-line front end: one subcommand per experiment."""
from __future__ import annotations

import argparse
import sys

from smallnoise.harness import config as configs
from smallnoise.harness import io
from smallnoise.harness.experiments import run
from smallnoise.models import ConditionError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallnoise", description="Small-noise diffusion experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in configs.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON config (missing keys fall back to the built-in defaults)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=f"results/{name}", help="output directory")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = configs.load(args.config, args.experiment) if args.config else configs.builtin(args.experiment)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.print_config:
            from smallnoise.jsonio import dumps17
            print(dumps17(cfg.to_dict(), indent=2))
            return 0
        outcome = run(cfg)
    except (ConditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    written = io.write(args.out, cfg, outcome)
    print(f"{cfg.experiment}: {outcome.status} ({len(written)} files in {args.out})")
    return 0 if outcome.passed else 1


if __name__ == "__main__":
    sys.exit(main())
