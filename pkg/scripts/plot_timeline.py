"""Draw a per-robot task chart from a timeline.csv.

    python3 scripts/plot_timeline.py results/team3/timeline.csv timeline.png
"""

from __future__ import annotations

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from btcap.sim import read_timeline  # noqa: E402

COLORS = {"explore": "tab:blue", "identify": "tab:orange", "decontaminate": "tab:green"}


def spans(rows):
    """(robot, start, end, interface, task_id, outcome) for every started execution."""
    open_, out = {}, []
    for t, robot, event, task, iface in rows:
        if event == "started":
            open_[(robot, task, iface)] = t
        elif event in ("completed", "failed", "lost") and (robot, task, iface) in open_:
            out.append((robot, open_.pop((robot, task, iface)), t, iface, task, event))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("timeline")
    ap.add_argument("output")
    args = ap.parse_args(argv)
    rows = read_timeline(args.timeline)
    robots = sorted({r[1] for r in rows if r[1]})
    fig, ax = plt.subplots(figsize=(10, 0.6 * len(robots) + 1.5))
    for robot, start, end, iface, task, outcome in spans(rows):
        y = robots.index(robot)
        ax.barh(y, end - start, left=start, color=COLORS.get(iface, "grey"),
                hatch="//" if outcome != "completed" else None, edgecolor="black", linewidth=0.5)
        ax.text(start + (end - start) / 2, y, task, ha="center", va="center", fontsize=7)
    for t, robot, event, *_ in rows:
        if event in ("joined", "left") and robot in robots:
            ax.plot(t, robots.index(robot), marker=">" if event == "joined" else "x",
                    color="green" if event == "joined" else "red")
    ax.set_yticks(range(len(robots)), robots)
    ax.set_xlabel("time [s]")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in COLORS.values()]
    ax.legend(handles, list(COLORS), loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
