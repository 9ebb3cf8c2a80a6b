#!/usr/bin/env python3
"""Run the five figure setups (40 states at c = 0.7, 0.85, 0.9; 75 and 150
states at c = 0.9) and print a one-line summary per run.

    python scripts/run_figures.py --out results/figures --seeds 0..2

Each run lands in ``<out>/s<states>_c<c>/seed_<k>/`` with the usual CLI
outputs; ``plot_results.py`` turns them into pictures.
"""

import argparse
import json
import sys
from pathlib import Path

from acvar.cli import load_config, parse_seed_range, run_experiment

SETUPS = [(40, 0.70), (40, 0.85), (40, 0.90), (75, 0.90), (150, 0.90)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/figures")
    ap.add_argument("--seeds", default="0..0")
    ap.add_argument("--cap", type=int, default=80_000)
    args = ap.parse_args(argv)

    failures = 0
    print(f"{'setup':<14}{'seed':>5}{'alpha':>9}{'zeta_T':>9}{'zeta*':>9}{'TV(pT,p*)':>11}{'above thr tilted/orig':>24}")
    for states, c in SETUPS:
        for seed in parse_seed_range(args.seeds):
            out = Path(args.out) / f"s{states}_c{c}" / f"seed_{seed}"
            cfg = load_config({"states": states, "c": c, "seed": seed, "cap": args.cap, "output_dir": str(out)})
            if run_experiment(cfg, stream=sys.stderr):
                failures += 1
                continue
            s = json.loads((out / "summary.json").read_text())
            print(
                f"{states:>3} / {c:<8}{seed:>5}{s['threshold']:>9.4f}{s['zeta_T']:>9.4f}{s['zeta_star']:>9.4f}"
                f"{s['mean_row_tv_pT_pstar']:>11.4f}"
                f"{s['frac_above_threshold_tilted']:>14.3f} / {s['frac_above_threshold_orig']:.3f}"
            )
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
