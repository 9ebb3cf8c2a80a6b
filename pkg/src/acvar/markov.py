"""Finite-state Markov chains: construction, simulation and stationary analysis."""

from __future__ import annotations

import bisect
import json
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from acvar.errors import ConvergenceError, InvalidKernelError, InvalidParameterError

ROW_SUM_ATOL = 1e-12
KERNEL_ATOL = 1e-9

# Sub-seed layout for one experiment seed. The order is part of the
# reproducibility contract: appending is fine, reordering is not.
STREAMS = ("chain", "rewards", "sa", "mc")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Split one experiment seed into independent generators, one per purpose.

    The streams are ``chain`` (matrix generation), ``rewards`` (random reward
    profiles), ``sa`` (warm start and the stochastic-approximation run) and
    ``mc`` (rejection oracle). They are spawned from a single
    :class:`numpy.random.SeedSequence`, so changing how much one consumer
    draws never perturbs another.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def _check_stochastic(P: np.ndarray, atol: float) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidParameterError(f"transition matrix must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)) or np.any(P < 0.0) or np.any(P > 1.0):
        raise InvalidKernelError("transition probabilities must lie in [0, 1]")
    dev = np.max(np.abs(P.sum(axis=1) - 1.0))
    if dev > atol:
        raise InvalidKernelError(f"rows must sum to 1 (max deviation {dev:.3e})")


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """A finite chain with a transition matrix ``P`` and per-state rewards ``g``.

    Arrays are copied and frozen on construction, so a chain can be shared
    read-only between concurrent runs.
    """

    P: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        g = np.array(self.g, dtype=float)
        _check_stochastic(P, ROW_SUM_ATOL)
        if g.shape != (P.shape[0],):
            raise InvalidParameterError(
                f"reward vector has shape {g.shape}, expected ({P.shape[0]},)"
            )
        if not np.all(np.isfinite(g)):
            raise InvalidParameterError("rewards must be finite")
        P.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "g", g)

    @property
    def s(self) -> int:
        return self.P.shape[0]

    def with_rewards(self, g) -> MarkovChain:
        return MarkovChain(self.P, g)

    def to_dict(self) -> dict:
        return {"s": self.s, "P": self.P.tolist(), "g": self.g.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> MarkovChain:
        try:
            s, P, g = data["s"], data["P"], data["g"]
        except KeyError as exc:
            raise InvalidParameterError(f"chain JSON is missing field {exc}") from None
        chain = cls(np.asarray(P, dtype=float), np.asarray(g, dtype=float))
        if chain.s != s:
            raise InvalidParameterError(f"chain JSON declares s={s} but P is {chain.s}x{chain.s}")
        return chain

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> MarkovChain:
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_random_chain(s: int, seed: int | np.random.Generator) -> np.ndarray:
    """Random strictly positive transition matrix.

    Each entry is ``Unif(0, 1) + 0.5`` before its row is normalized, so every
    probability lies strictly inside ``(1/(3s), 3/s)``.
    """
    if s < 2:
        raise InvalidParameterError(f"need at least 2 states, got {s}")
    rng = np.random.default_rng(seed)
    raw = rng.random((s, s)) + 0.5
    return raw / raw.sum(axis=1, keepdims=True)


def linear_reward_profile(s: int, max_reward: float) -> np.ndarray:
    """Rewards proportional to the state index: ``g(i) = max_reward * i / (s - 1)``."""
    if s < 2:
        raise InvalidParameterError(f"need at least 2 states, got {s}")
    if not max_reward > 0:
        raise InvalidParameterError(f"max_reward must be positive, got {max_reward}")
    return max_reward * np.arange(s) / (s - 1)


def uniform_reward_profile(s: int, max_reward: float, seed) -> np.ndarray:
    """Rewards drawn once from ``Unif(0, max_reward)``; fixed for the life of the chain."""
    if s < 1:
        raise InvalidParameterError(f"need at least 1 state, got {s}")
    if not max_reward > 0:
        raise InvalidParameterError(f"max_reward must be positive, got {max_reward}")
    return np.random.default_rng(seed).uniform(0.0, max_reward, size=s)


def _sample_row(cum, u: float) -> int:
    # cum is the cumulative row; bisect_right skips zero-probability states.
    j = bisect.bisect_right(cum, u)
    if j >= len(cum):
        # u landed in the round-off gap above cum[-1]; take the last reachable state
        j = len(cum) - 1
        while j > 0 and cum[j] == cum[j - 1]:
            j -= 1
    return j


def simulate_step(P: np.ndarray, state: int, rng: np.random.Generator) -> int:
    """Draw the successor of ``state`` by inverse-transform sampling of row ``P[state]``."""
    row = np.asarray(P[state], dtype=float)
    if np.any(row < 0.0) or abs(row.sum() - 1.0) > KERNEL_ATOL:
        raise InvalidKernelError(f"row {state} is not a probability vector (sum {row.sum()!r})")
    return _sample_row(np.cumsum(row).tolist(), rng.random())


def simulate_path(P: np.ndarray, start: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate ``n`` transitions from ``start``; returns the ``n + 1`` visited states.

    Consumes the generator exactly as ``n`` successive :func:`simulate_step`
    calls would, so both routes produce the same trajectory.
    """
    P = np.asarray(P, dtype=float)
    _check_stochastic(P, KERNEL_ATOL)
    cums = [row.tolist() for row in np.cumsum(P, axis=1)]
    out = np.empty(n + 1, dtype=np.int64)
    out[0] = x = start
    for t, u in enumerate(rng.random(n).tolist(), start=1):
        x = _sample_row(cums[x], u)
        out[t] = x
    return out


def stationary_distribution(P: np.ndarray, tol: float = 1e-12, max_sweeps: int = 1_000_000) -> np.ndarray:
    """Stationary law of an irreducible aperiodic chain by power iteration.

    Starts from the uniform vector and applies ``pi <- pi @ P`` until no entry
    moves by more than ``tol``. Periodic or reducible chains typically fail to
    settle and raise :class:`ConvergenceError`.
    """
    P = np.asarray(P, dtype=float)
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_sweeps):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    raise ConvergenceError(
        f"stationary distribution did not converge in {max_sweeps} sweeps "
        "(chain may be reducible or periodic)"
    )


def max_cycle_mean(P: np.ndarray, g: np.ndarray) -> float:
    """Largest long-run average reward any path of the chain can sustain.

    This is the maximum over directed cycles of the transition graph of the
    mean reward along the cycle (Karp's algorithm), i.e. the supremum of
    attainable thresholds for upper-tail conditioning.
    """
    P = np.asarray(P, dtype=float)
    g = np.asarray(g, dtype=float)
    s = P.shape[0]
    w = np.where(P > 0.0, g[:, None], -np.inf)
    D = np.full((s + 1, s), -np.inf)
    D[0] = 0.0
    for k in range(1, s + 1):
        D[k] = np.max(D[k - 1][:, None] + w, axis=0)
    best = -np.inf
    for v in range(s):
        if not np.isfinite(D[s, v]):
            continue
        ratios = [(D[s, v] - D[k, v]) / (s - k) for k in range(s) if np.isfinite(D[k, v])]
        best = max(best, min(ratios))
    return float(best)


def total_variation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise total-variation distance ``0.5 * sum |p - q|`` (last axis)."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def chain_sampler(chain: MarkovChain, start: int) -> Callable[[np.random.Generator], tuple[int, float]]:
    """Step sampler that reveals ``(state, reward)`` one transition at a time."""
    state = start

    def step(rng: np.random.Generator) -> tuple[int, float]:
        nonlocal state
        state = simulate_step(chain.P, state, rng)
        return state, float(chain.g[state])

    return step


def estimate_rewards_by_exploration(
    sampler: Callable[[np.random.Generator], tuple[int, float]],
    s: int,
    rng: np.random.Generator,
    steps: int | None = None,
) -> np.ndarray:
    """Recover a reward profile by running the chain ``10 * s`` steps.

    Each state's reward is recorded on its first visit; states never reached
    keep reward 0.
    """
    steps = 10 * s if steps is None else steps
    g = np.zeros(s)
    seen = np.zeros(s, dtype=bool)
    for _ in range(steps):
        state, reward = sampler(rng)
        if not seen[state]:
            g[state] = reward
            seen[state] = True
    return g
