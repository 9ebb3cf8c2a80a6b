"""Command-line experiment runner.

One invocation builds a seeded random chain, runs the exact oracle and the
stochastic-approximation scheme on it (optionally the rejection oracle too)
and writes plot-ready files:

``trace.csv``    iter, zeta, running_avg_reward_tilted, threshold
``freq.csv``     state, reward, count_orig, count_tilted (ordered by reward)
``summary.json`` SA estimates next to the oracle values
``chain.json``   the instance itself

Settings come from flags, from a JSON or flat ``key = value`` file given by
``--config``, or both (flags win).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from acvar import markov, oracle, sa
from acvar.density import DEFAULT_BANDWIDTH
from acvar.errors import AcvarError, InvalidParameterError, NoAcceptanceError

PROFILES = ("linear", "uniform", "file")
DEFAULT_MAX_REWARD = {"linear": 3.0, "uniform": 4.0}
TRACE_HEADER = ("iter", "zeta", "running_avg_reward_tilted", "threshold")
FREQ_HEADER = ("state", "reward", "count_orig", "count_tilted")


class ConfigError(InvalidParameterError):
    """A configuration field is missing or invalid; the message names it."""


@dataclass(frozen=True)
class ExperimentConfig:
    states: int
    seed: int = 0
    c: float = 0.9
    tail: str = "upper"
    reward_profile: str = "linear"
    reward_file: str | None = None
    max_reward: float | None = None
    bandwidth: float = DEFAULT_BANDWIDTH
    warm_steps: int = 10_000
    cap: int = 80_000
    k_scale: float = 2.0
    zeta0: float | None = None
    term_window: int = 5_000
    term_tol: float = 1e-3
    output_dir: str = "out"
    run_mc_oracle: bool = False
    mc_n: int = 20
    mc_paths: int = 200_000

    def __post_init__(self):
        def bad(name, why):
            raise ConfigError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.states < 2:
            bad("states", "need at least 2 states")
        if not 0.0 < self.c < 1.0:
            bad("c", "must lie strictly between 0 and 1")
        if self.tail not in ("upper", "lower"):
            bad("tail", "must be 'upper' or 'lower'")
        if self.reward_profile not in PROFILES:
            bad("reward_profile", f"must be one of {', '.join(PROFILES)}")
        if self.reward_profile == "file" and not self.reward_file:
            bad("reward_file", "required when reward_profile is 'file'")
        if self.max_reward is not None and not self.max_reward > 0:
            bad("max_reward", "must be positive")
        if not self.bandwidth > 0:
            bad("bandwidth", "must be positive")
        if self.warm_steps < self.states:
            bad("warm_steps", "must be at least the number of states")
        if self.cap < 1:
            bad("cap", "must be at least 1")
        if not 0 < self.k_scale <= 2:
            bad("k_scale", "must lie in (0, 2] so that a(0) <= 1")
        if self.term_window < 2:
            bad("term_window", "must be at least 2")
        if self.mc_n < 2:
            bad("mc_n", "must be at least 2")
        if self.mc_paths < 1:
            bad("mc_paths", "must be at least 1")

    @property
    def effective_max_reward(self) -> float | None:
        if self.max_reward is not None:
            return self.max_reward
        return DEFAULT_MAX_REWARD.get(self.reward_profile)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
# flag spelling -> field name where the two differ
_ALIASES = {"out": "output_dir", "mc_oracle": "run_mc_oracle"}


def _convert(name: str, raw):
    kind = _FIELD_TYPES[name]
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "null")):
        if "None" in kind:
            return None
        raise ConfigError(f"{name}: a value is required")
    try:
        if kind.startswith("int"):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {raw!r} as {kind}") from None


def _normalize(mapping: dict) -> dict:
    out = {}
    for key, value in mapping.items():
        name = key.strip().lstrip("-").replace("-", "_")
        name = _ALIASES.get(name, name)
        if name not in _FIELD_TYPES:
            raise ConfigError(f"{key}: unknown configuration field")
        out[name] = _convert(name, value)
    return out


def read_config_file(path) -> dict:
    """Parse a JSON object or flat ``key = value`` lines (``#`` starts a comment)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
        return _normalize(data)
    data = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config: {path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        data[key.strip()] = value.strip()
    return _normalize(data)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="acvar",
        description="Run the ACVaR oracle and stochastic approximation on a seeded random chain.",
        argument_default=argparse.SUPPRESS,
    )
    p.add_argument("--config", help="JSON or key=value file; flags override its entries")
    p.add_argument("--states", help="number of states (required)")
    p.add_argument("--seed", help="experiment seed (default 0)")
    p.add_argument("--seeds", help="seed range a..b (inclusive); one subdirectory per seed")
    p.add_argument("--c", help="quantile level in (0, 1) (default 0.9)")
    p.add_argument("--tail", choices=("upper", "lower"))
    p.add_argument("--reward-profile", choices=PROFILES)
    p.add_argument("--reward-file", help="rewards as a JSON list or whitespace-separated numbers")
    p.add_argument("--max-reward", help="reward scale (default 3 linear, 4 uniform)")
    p.add_argument("--bandwidth", help=f"KDE bandwidth (default {DEFAULT_BANDWIDTH})")
    p.add_argument("--warm-steps", help="warm-start length (default 10000)")
    p.add_argument("--cap", help="iteration cap (default 80000)")
    p.add_argument("--k-scale", help="step-size scale k in (0, 2] (default 2)")
    p.add_argument("--zeta0", help="initial tilt (default 1, or -1 for the lower tail)")
    p.add_argument("--term-window", help="termination window (default 5000)")
    p.add_argument("--term-tol", help="termination tolerance on the zeta range (default 1e-3)")
    p.add_argument("--mc-oracle", action="store_const", const=True, help="also run the rejection oracle")
    p.add_argument("--mc-n", help="rejection-oracle path length (default 20)")
    p.add_argument("--mc-paths", help="rejection-oracle path count (default 200000)")
    p.add_argument("--out", help="output directory (default ./out)")
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_flags(argv) -> tuple[dict, str | None, str | None]:
    parser = build_parser()
    parser.__class__ = _Parser
    ns = vars(parser.parse_args(list(argv)))
    config_path = ns.pop("config", None)
    seeds = ns.pop("seeds", None)
    return _normalize(ns), config_path, seeds


def load_config(source) -> ExperimentConfig:
    """Build a validated config from a flag list, a config-file path or a mapping."""
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, dict):
        values = _normalize(source)
    elif isinstance(source, (str, os.PathLike)):
        values = read_config_file(source)
    else:
        flags, config_path, _ = _parse_flags(source)
        values = read_config_file(config_path) if config_path else {}
        values.update(flags)
    if "states" not in values or values["states"] is None:
        raise ConfigError("states: required field is missing")
    return ExperimentConfig(**values)


def parse_seed_range(text: str) -> list[int]:
    """``"3..7"`` -> ``[3, 4, 5, 6, 7]``; a single integer is a one-seed range."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"seeds: expected 'a..b', got {text!r}") from None
    if hi < lo:
        raise ConfigError(f"seeds: empty range {text!r}")
    return list(range(lo, hi + 1))


def build_chain(config: ExperimentConfig) -> markov.MarkovChain:
    streams = markov.make_streams(config.seed)
    P = markov.generate_random_chain(config.states, streams["chain"])
    if config.reward_profile == "linear":
        g = markov.linear_reward_profile(config.states, config.effective_max_reward)
    elif config.reward_profile == "uniform":
        g = markov.uniform_reward_profile(config.states, config.effective_max_reward, streams["rewards"])
    else:
        g = _read_rewards(config.reward_file, config.states)
    return markov.MarkovChain(P, g)


def _read_rewards(path, s: int) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"reward_file: cannot read {path}: {exc.strerror}") from None
    try:
        g = np.asarray(json.loads(text), dtype=float) if text.lstrip().startswith("[") else np.array(text.split(), dtype=float)
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"reward_file: {path} does not hold a list of numbers") from None
    if g.shape != (s,):
        raise ConfigError(f"reward_file: expected {s} rewards, found {g.size}")
    return g


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_plot_data(trace: sa.RunTrace, solution: oracle.OracleSolution | None, output_dir) -> list[Path]:
    """Write ``trace.csv`` and ``freq.csv`` into ``output_dir``; returns their paths.

    ``solution`` is accepted so callers can hand over a matched pair; the
    files themselves only need the trace (the threshold line is a column of
    ``trace.csv``).
    """
    out = Path(output_dir)
    written = []
    trace_path = out / "trace.csv"
    thresholds = trace.threshold_series if trace.threshold_series is not None else None
    try:
        with trace_path.open("w", newline="") as fh:
            written.append(trace_path)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for i, (z, avg) in enumerate(zip(trace.zeta_series.tolist(), trace.avg_reward_series.tolist())):
                th = trace.threshold if thresholds is None else thresholds[i]
                w.writerow((i + 1, _fmt(z), _fmt(avg), _fmt(th)))
        freq_path = out / "freq.csv"
        order = np.argsort(trace.rewards, kind="stable")
        with freq_path.open("w", newline="") as fh:
            written.append(freq_path)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FREQ_HEADER)
            for i in order.tolist():
                w.writerow((i, _fmt(trace.rewards[i]), int(trace.freq_orig[i]), int(trace.freq_tilted[i])))
    except OSError as exc:
        for p in written:
            p.unlink(missing_ok=True)
        raise OSError(exc.errno, f"cannot write plot data: {exc.strerror}", str(exc.filename)) from None
    return written


def summarize(config, chain, trace, solution, mc=None) -> dict:
    p_T = trace.kernel
    zeta_star = solution.zeta_star
    try:
        acvar_sa = float(markov.stationary_distribution(p_T) @ chain.g)
    except AcvarError:
        acvar_sa = None
    summary = {
        "config": dataclasses.asdict(config),
        "states": chain.s,
        "c": config.c,
        "N": config.warm_steps,
        "bandwidth": config.bandwidth,
        "threshold": trace.threshold,
        "zeta_T": trace.zeta,
        "zeta_star": zeta_star,
        "zeta_abs_error": abs(trace.zeta - zeta_star),
        "zeta_within_tolerance": abs(trace.zeta - zeta_star) <= max(0.05, 0.1 * abs(zeta_star)),
        "mean_row_tv_pT_pstar": float(markov.total_variation(p_T, solution.p_star).mean()),
        "mean_row_tv_pT_P": float(markov.total_variation(p_T, chain.P).mean()),
        "acvar_oracle": solution.acvar,
        "acvar_sa": acvar_sa,
        "log_rho_star": solution.log_rho_star,
        "iterations": trace.iterations,
        "terminated_at": trace.terminated_at,
        "frac_above_threshold_orig": trace.fraction_above(trace.freq_orig),
        "frac_above_threshold_tilted": trace.fraction_above(trace.freq_tilted),
        "oracle": solution.to_dict(),
    }
    if isinstance(mc, NoAcceptanceError):
        summary["mc_oracle"] = {"n": config.mc_n, "num_paths": config.mc_paths, "accepted": 0, "error": str(mc)}
    elif mc is not None:
        rows = mc.defined
        summary["mc_oracle"] = {
            "n": config.mc_n,
            "num_paths": config.mc_paths,
            "accepted": mc.accepted,
            "acceptance_rate": mc.acceptance_rate,
            "defined_rows": int(rows.sum()),
            "mean_row_tv_to_pstar": float(markov.total_variation(mc.kernel[rows], solution.p_star[rows]).mean()),
        }
    return summary


def run_experiment(config: ExperimentConfig, stream=None) -> int:
    """Run one configured experiment; 0 on success, 1 on failure (outputs removed)."""
    stream = sys.stderr if stream is None else stream
    out = Path(config.output_dir)
    created = not out.exists()
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        chain = build_chain(config)
        streams = markov.make_streams(config.seed)
        trace = sa.run(
            chain,
            config.c,
            sa.make_schedule(config.k_scale),
            warm_steps=config.warm_steps,
            cap=config.cap,
            rng=streams["sa"],
            tail=config.tail,
            bandwidth=config.bandwidth,
            window=config.term_window,
            tol=config.term_tol,
            zeta0=config.zeta0,
        )
        solution = oracle.acvar_oracle(chain, trace.threshold, tail=config.tail)
        mc = None
        if config.run_mc_oracle:
            # a deep threshold can starve the rejection sampler; that is a
            # finding about (n, num_paths), not a reason to drop the SA results
            try:
                mc = oracle.mc_conditioning_oracle(
                    chain, trace.threshold, config.mc_n, config.mc_paths, streams["mc"], tail=config.tail
                )
            except NoAcceptanceError as exc:
                mc = exc
        written += emit_plot_data(trace, solution, out)
        summary_path = out / "summary.json"
        written.append(summary_path)
        summary_path.write_text(json.dumps(summarize(config, chain, trace, solution, mc), indent=2) + "\n")
        chain_path = out / "chain.json"
        written.append(chain_path)
        chain.save(chain_path)
    except (AcvarError, OSError, ValueError) as exc:
        for p in written:
            p.unlink(missing_ok=True)
        if created and out.exists() and not any(out.iterdir()):
            out.rmdir()
        where = getattr(exc, "iteration", None)
        print(f"acvar: error: {type(exc).__name__}: {exc}", file=stream)
        if where is not None and "iteration" not in str(exc):
            print(f"acvar: failed at iteration {where}", file=stream)
        return 1
    print(f"acvar: wrote {', '.join(p.name for p in written)} to {out}", file=stream)
    return 0


def _run_seed(config: ExperimentConfig) -> int:
    return run_experiment(config)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        flags, config_path, seeds = _parse_flags(argv)
        values = read_config_file(config_path) if config_path else {}
        values.update(flags)
        if seeds is None:
            return run_experiment(load_config(values))
        seed_list = parse_seed_range(seeds)
        base = load_config({**values, "seed": seed_list[0]})
    except ConfigError as exc:
        print(f"acvar: config error: {exc}", file=sys.stderr)
        return 2
    configs = [
        dataclasses.replace(base, seed=s, output_dir=str(Path(base.output_dir) / f"seed_{s}"))
        for s in seed_list
    ]
    workers = min(len(configs), os.cpu_count() or 1)
    if workers == 1:
        codes = [run_experiment(cfg) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_seed, configs))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
