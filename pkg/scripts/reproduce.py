"""Run the bundled scenarios and print a metrics summary.

    python3 scripts/reproduce.py [--out results] [--robustness 50]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from btcap.scenario import DATA_DIR
from btcap.sim import run_scenario

SCENARIOS = ["single_husky", "dynamic_team", "team3"]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--robustness", type=int, default=0, help="team3 seeds to run at fail_chance 0.2")
    args = ap.parse_args(argv)
    mission = Path(DATA_DIR) / "mission.json"
    rc = 0
    print(f"{'scenario':<20} {'outcome':<8} {'exit':>4} {'makespan':>9} {'tasks':>6}  utilization")
    for name in SCENARIOS:
        out = Path(args.out) / name
        r = run_scenario(Path(DATA_DIR) / "scenarios" / f"{name}.json", mission, out)
        util = json.loads((out / "metrics.json").read_text())["utilization"]
        util_s = " ".join(f"{k}={v:.2f}" for k, v in sorted(util.items()))
        print(f"{name:<20} {r.outcome:<8} {r.exit_code:>4} {r.metrics['makespan']:>9} "
              f"{r.metrics['completed_tasks']:>6}  {util_s}")
        rc |= r.exit_code
    if args.robustness:
        ok = 0
        for seed in range(args.robustness):
            r = run_scenario(Path(DATA_DIR) / "scenarios" / "team3.json", mission, seed=seed,
                             overrides={"fail_chance": 0.2})
            ok += r.exit_code == 0
        print(f"robustness: {ok}/{args.robustness} seeds succeeded at fail_chance 0.2")
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
