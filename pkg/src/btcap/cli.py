"""Command line entry point.

    btcap run <scenario.json> <mission.json> --out DIR [--seed N] [--max-time S]
    btcap validate <dir>

Log verbosity comes from the ``BTCAP_LOG`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .capability import CapabilityError
from .scenario import ScenarioError, validate_bundle
from .sim import run_scenario
from .tree import StructureError


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btcap", description="Capability behavior-tree team simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("scenario")
    r.add_argument("mission")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--max-time", type=float, default=None)
    v = sub.add_parser("validate", help="check a bundle directory")
    v.add_argument("directory")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BTCAP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        report = validate_bundle(args.directory)
        for line in report:
            print(line)
        return 1 if report else 0
    try:
        result = run_scenario(args.scenario, args.mission, args.out, seed=args.seed, max_time=args.max_time)
    except (ScenarioError, CapabilityError, StructureError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    m = result.metrics
    print(f"{result.outcome} at t={result.end_time:.1f}s makespan={m['makespan']} "
          f"tasks={m['completed_tasks']} outputs={Path(args.out)}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
