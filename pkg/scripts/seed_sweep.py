#!/usr/bin/env python3
"""Accuracy of the stochastic-approximation run against the exact oracle
over many seeds, without writing files.

Useful for judging a change to the step sizes, the reward scale or the
termination rule before committing to it:

    python scripts/seed_sweep.py --states 40 --c 0.9 --seeds 0..9 --k 2.0
"""

import argparse

import numpy as np

from acvar import oracle, sa
from acvar.cli import build_chain, load_config, parse_seed_range
from acvar.errors import NumericalError
from acvar.markov import make_streams, total_variation


def one_run(cfg):
    chain = build_chain(cfg)
    trace = sa.run(
        chain, cfg.c, sa.make_schedule(cfg.k_scale), warm_steps=cfg.warm_steps, cap=cfg.cap,
        rng=make_streams(cfg.seed)["sa"], tail=cfg.tail, bandwidth=cfg.bandwidth,
        window=cfg.term_window, tol=cfg.term_tol,
    )
    sol = oracle.acvar_oracle(chain, trace.threshold, tail=cfg.tail)
    tol = max(0.05, 0.1 * abs(sol.zeta_star))
    tail_range = float(np.ptp(trace.zeta_series[-cfg.term_window:]))
    return {
        "zeta_err_over_tol": abs(trace.zeta - sol.zeta_star) / tol,
        "tv": float(total_variation(trace.kernel, sol.p_star).mean()),
        "last_window_range": tail_range,
        "terminated_at": trace.terminated_at,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--states", type=int, default=40)
    ap.add_argument("--c", type=float, default=0.9)
    ap.add_argument("--seeds", default="0..9")
    ap.add_argument("--k", type=float, default=2.0, help="step-size scale")
    ap.add_argument("--max-reward", type=float, default=None)
    ap.add_argument("--cap", type=int, default=80_000)
    args = ap.parse_args(argv)

    rows = []
    for seed in parse_seed_range(args.seeds):
        cfg = load_config({"states": args.states, "c": args.c, "seed": seed, "k_scale": args.k,
                           "max_reward": args.max_reward, "cap": args.cap})
        try:
            r = one_run(cfg)
        except NumericalError as exc:
            print(f"seed {seed}: {type(exc).__name__}: {exc}")
            continue
        rows.append(r)
        print(f"seed {seed}: zeta err/tol {r['zeta_err_over_tol']:.2f}  TV {r['tv']:.3f}  "
              f"zeta range over last window {r['last_window_range']:.1e}  terminated {r['terminated_at']}")
    if rows:
        med = {k: float(np.median([r[k] for r in rows])) for k in ("zeta_err_over_tol", "tv", "last_window_range")}
        print(f"median over {len(rows)} runs: zeta err/tol {med['zeta_err_over_tol']:.2f}, TV {med['tv']:.3f}, "
              f"window range {med['last_window_range']:.1e}")


if __name__ == "__main__":
    main()
