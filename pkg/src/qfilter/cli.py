"""Command line entry point: ``qfilter run`` and ``qfilter observability``."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import SCENARIOS, ConfigError, ExperimentConfig, run
from .sme import IntegrationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRATION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfilter", description="Continuous-measurement parameter filters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a seeded experiment batch")
    p_run.add_argument("scenario", choices=SCENARIOS)
    p_run.add_argument("--config", required=True, help="JSON configuration file")
    p_run.add_argument("--seed", type=int, help="master seed (required when n_runs > 1)")
    p_run.add_argument("--out", help="output directory")

    p_obs = sub.add_parser("observability", help="print the observability report as JSON")
    p_obs.add_argument("--config", required=True, help="JSON configuration file")
    return parser


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config, scenario=args.scenario, seed=args.seed, out=args.out)
    result = run(cfg)
    out = result.write()
    print(f"wrote {len(result.tables) + 1} files to {out}")
    return EXIT_OK


def _cmd_observability(args) -> int:
    cfg = ExperimentConfig.from_json(args.config, scenario="observability")
    report = run(cfg).summary
    print(json.dumps({k: report[k] for k in ("dim_observable", "dim_ambient", "observable", "iterations")}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_observability(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration failed: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
