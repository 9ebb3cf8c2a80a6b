#!/usr/bin/env python3
"""Draw the zeta trajectory and the tilted/original state frequencies for
every run directory below a results root (anything holding a trace.csv).

Needs matplotlib (``pip install -e .[plot]``).

    python scripts/plot_results.py results/figures
"""

import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


def plot_run(run: Path):
    trace = read_csv(run / "trace.csv")
    freq = read_csv(run / "freq.csv")
    summary = json.loads((run / "summary.json").read_text())

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(trace["iter"], trace["zeta"], lw=0.8, label="zeta (SA)")
    if summary.get("zeta_star") is not None:
        ax1.axhline(summary["zeta_star"], color="k", ls="--", lw=0.8, label="zeta* (oracle)")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("zeta")
    ax1.legend()

    x = range(len(freq["reward"]))
    tot_o, tot_t = sum(freq["count_orig"]), sum(freq["count_tilted"])
    ax2.bar(x, [v / tot_o for v in freq["count_orig"]], alpha=0.6, label="original")
    ax2.bar(x, [v / tot_t for v in freq["count_tilted"]], alpha=0.6, label="tilted")
    above = [i for i, r in enumerate(freq["reward"]) if r >= summary["threshold"]]
    if above:
        ax2.axvline(above[0] - 0.5, color="k", ls=":", lw=0.8, label="threshold")
    ax2.set_xlabel("states ordered by reward")
    ax2.set_ylabel("visit frequency")
    ax2.legend()

    fig.suptitle(f"{summary['states']} states, c = {summary['c']}")
    fig.tight_layout()
    fig.savefig(run / "run.png", dpi=120)
    plt.close(fig)
    return run / "run.png"


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    root = Path(argv[0] if argv else "results")
    runs = sorted(p.parent for p in root.rglob("trace.csv"))
    if not runs:
        print(f"no trace.csv below {root}")
        return 1
    for run in runs:
        print(plot_run(run))
    return 0


if __name__ == "__main__":
    sys.exit(main())
