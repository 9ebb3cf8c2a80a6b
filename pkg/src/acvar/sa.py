"""Two-timescale stochastic approximation of the tilted kernel.

A single simulated trajectory drives three coupled estimates:

* the tilt ``zeta`` (slow timescale), by projected stochastic gradient
  ascent on ``zeta * threshold - Lambda(zeta)``;
* the eigenfunction ``V`` of the multiplicative Poisson equation (fast
  timescale, asynchronous, one component per visit), with an
  importance-sampling correction because the trajectory is simulated
  under the current tilted kernel rather than under ``P``;
* the tilted kernel itself, refreshed row by row from ``V``.

The threshold is the KDE inverse CDF of rewards seen during a warm start
under the original chain and then frozen.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from acvar.density import DEFAULT_BANDWIDTH, KdeModel, fit_kde
from acvar.errors import (
    InvalidParameterError,
    InvalidStateError,
    LikelihoodRatioError,
    NumericalError,
    TiltOverflowError,
)
from acvar.markov import (
    MarkovChain,
    _sample_row,
    chain_sampler,
    estimate_rewards_by_exploration,
    simulate_path,
)

LR_FLOOR = 1e-12
_EXP_WARN = math.log(1e30)
_EXP_MAX = math.log(np.finfo(float).max)
_UPPER, _LOWER = "upper", "lower"


class RewardScaleWarning(UserWarning):
    """``zeta * g`` is large enough that exp() is close to overflowing."""


@dataclass(frozen=True)
class StepSchedule:
    """``a(n) = k / (1 + (n+1)^0.6)`` (fast) and ``b(n) = k / (1 + (n+1)^0.8)`` (slow)."""

    k: float
    fast_exponent: float = 0.6
    slow_exponent: float = 0.8
    slow_k: float | None = None

    def a(self, n: int) -> float:
        return self.k / (1.0 + (n + 1) ** self.fast_exponent)

    def b(self, n: int) -> float:
        k = self.k if self.slow_k is None else self.slow_k
        return k / (1.0 + (n + 1) ** self.slow_exponent)


def make_schedule(k: float) -> StepSchedule:
    if not k > 0:
        raise InvalidParameterError(f"step-size scale k must be positive, got {k}")
    return StepSchedule(float(k))


@dataclass
class SaState:
    """Mutable iterate of the algorithm.

    ``offset`` translates the rewards inside the fast update only:
    ``exp(zeta * (g(k) - offset))`` replaces ``exp(zeta * g(k))``. A constant
    translation leaves the tilt and the tilted kernel unchanged and merely
    rescales the fixed point of ``V`` (its ``i0`` component converges to
    ``rho * exp(-zeta * offset)``). ``offset = 0`` is the untranslated update.
    """

    zeta: float
    V: np.ndarray
    p_tilt: np.ndarray
    visits: np.ndarray
    threshold: float
    i0: int
    current_state: int
    tail: str = _UPPER
    offset: float = 0.0
    iter: int = 0

    @classmethod
    def initial(
        cls,
        chain: MarkovChain,
        threshold: float,
        start: int,
        i0: int = 0,
        zeta0: float = 1.0,
        tail: str = _UPPER,
        offset: float = 0.0,
    ) -> SaState:
        """``zeta_0``, ``V_0 = 1`` and ``p_0 = P``."""
        return cls(
            zeta=float(zeta0),
            V=np.ones(chain.s),
            p_tilt=np.array(chain.P, dtype=float),
            visits=np.zeros(chain.s, dtype=np.int64),
            threshold=float(threshold),
            i0=int(i0),
            current_state=int(start),
            tail=tail,
            offset=float(offset),
        )

    def kernel_estimate(self, chain: MarkovChain) -> np.ndarray:
        """Every row refreshed from the current ``V``.

        ``p_tilt`` only refreshes the row of the state just visited, so rows of
        rarely visited states can be arbitrarily stale; this is the estimate
        the current ``V`` actually implies.
        """
        K = chain.P * self.V[None, :]
        return K / K.sum(axis=1, keepdims=True)

    def copy(self) -> SaState:
        return SaState(
            self.zeta, self.V.copy(), self.p_tilt.copy(), self.visits.copy(), self.threshold,
            self.i0, self.current_state, self.tail, self.offset, self.iter,
        )


def tilted_row_update(state: SaState, chain: MarkovChain, k: int) -> np.ndarray:
    """Refresh row ``k`` of the tilted kernel to ``p(k, l) V(l)``, normalized.

    The full update multiplies this by ``exp(zeta g(k)) / (V(i0) V(k))``, a
    constant along the row that normalization removes, so it is never formed
    (it is also the factor most likely to overflow).
    """
    raw = chain.P[k] * state.V
    total = raw.sum()
    if not (total > 0 and math.isfinite(total)):
        raise InvalidStateError(f"tilted row {k} has no usable mass (sum {total!r})")
    row = raw / total
    state.p_tilt[k] = row
    return row


def slow_update(zeta: float, b_n: float, threshold: float, reward_sample: float, tail: str = _UPPER) -> float:
    """Projected ascent step ``zeta + b (threshold - reward)``.

    Clamped at 0 from below for the upper tail and from above for the lower
    tail.
    """
    z = zeta + b_n * (threshold - reward_sample)
    return max(0.0, z) if tail == _UPPER else min(0.0, z)


def fast_update(state: SaState, chain: MarkovChain, k: int, next_state: int, schedule: StepSchedule) -> float:
    """Update ``V(k)`` from one observed transition ``k -> next_state``.

    ``V(k) += a(nu_k) [exp(zeta (g(k) - offset)) / V(i0) * p/p_tilt * V(next) - V(k)]``
    where ``nu_k`` is the number of earlier updates of ``V(k)`` (its local
    clock) and ``p/p_tilt`` is the likelihood ratio of the realized
    transition. The clock is advanced after the step size is read.
    """
    q = state.p_tilt[k, next_state]
    if q < LR_FLOOR:
        raise LikelihoodRatioError(
            f"tilted probability {q:.3e} of realized transition {k}->{next_state} is below {LR_FLOOR}"
        )
    expo = state.zeta * (chain.g[k] - state.offset)
    if expo > _EXP_MAX:
        raise TiltOverflowError(f"exp({expo:.1f}) overflows; rescale the rewards")
    a_n = schedule.a(int(state.visits[k]))
    target = math.exp(expo) / state.V[state.i0] * (chain.P[k, next_state] / q) * state.V[next_state]
    # convex-combination form: stays positive for a_n <= 1 even when target << V(k)
    new = (1.0 - a_n) * state.V[k] + a_n * target
    if not (new > 0 and math.isfinite(new)):
        raise InvalidStateError(f"V({k}) left (0, inf): {new!r}")
    state.V[k] = new
    state.visits[k] += 1
    return new


def check_termination(zeta_series, window: int, tol: float) -> bool:
    """True iff the last ``window`` values of ``zeta`` span at most ``tol``."""
    if window < 2:
        raise InvalidParameterError(f"window must be at least 2, got {window}")
    if len(zeta_series) < window:
        return False
    tail = np.asarray(zeta_series[-window:], dtype=float)
    return bool(tail.max() - tail.min() <= tol)


class _WindowRange:
    """Sliding-window max - min in O(1) amortized per push."""

    def __init__(self, window: int):
        self.window = window
        self.n = 0
        self._max: deque = deque()
        self._min: deque = deque()

    def push(self, x: float) -> float:
        i = self.n
        self.n += 1
        while self._max and self._max[-1][1] <= x:
            self._max.pop()
        self._max.append((i, x))
        while self._min and self._min[-1][1] >= x:
            self._min.pop()
        self._min.append((i, x))
        lo = i - self.window + 1
        if self._max[0][0] < lo:
            self._max.popleft()
        if self._min[0][0] < lo:
            self._min.popleft()
        return self._max[0][1] - self._min[0][1]


@dataclass
class RunTrace:
    """Everything a run produced, in plot-ready form.

    ``kernel`` is the final tilted-kernel estimate with every row refreshed
    from the final ``V``; ``final_state.p_tilt`` holds the rows exactly as
    last used for simulation.
    """

    zeta_series: np.ndarray
    avg_reward_series: np.ndarray
    threshold: float
    freq_orig: np.ndarray
    freq_tilted: np.ndarray
    terminated_at: int | None
    final_state: SaState
    kernel: np.ndarray
    rewards: np.ndarray
    c: float
    kde: KdeModel = field(repr=False)
    threshold_series: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return len(self.zeta_series)

    @property
    def zeta(self) -> float:
        return float(self.zeta_series[-1]) if self.iterations else self.final_state.zeta

    def fraction_above(self, counts: np.ndarray) -> float:
        """Share of ``counts`` on states whose reward is at least the threshold."""
        counts = np.asarray(counts, dtype=float)
        return float(counts[self.rewards >= self.threshold].sum() / counts.sum())

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "terminated_at": self.terminated_at,
            "zeta_T": self.zeta,
            "threshold": self.threshold,
            "c": self.c,
            "kde_samples": self.kde.n,
            "bandwidth": self.kde.bandwidth,
            "i0": self.final_state.i0,
            "offset": self.final_state.offset,
            "tail": self.final_state.tail,
            "avg_reward_tilted": float(self.avg_reward_series[-1]) if self.iterations else None,
            "frac_above_threshold_orig": self.fraction_above(self.freq_orig),
            "frac_above_threshold_tilted": self.fraction_above(self.freq_tilted),
        }


def run(
    chain: MarkovChain,
    c: float,
    schedule: StepSchedule,
    warm_steps: int = 10_000,
    cap: int = 80_000,
    rng: np.random.Generator | int | None = None,
    tail: str = _UPPER,
    *,
    bandwidth: float = DEFAULT_BANDWIDTH,
    window: int = 5_000,
    tol: float = 1e-3,
    zeta0: float | None = None,
    i0: int | None = None,
    offset: float | None = None,
    rewards_known: bool = True,
    update_threshold: bool = False,
    refit_every: int = 1_000,
    tilted_start: int | None = None,
) -> RunTrace:
    """Run the full algorithm on ``chain`` at quantile level ``c``.

    1. Warm start: simulate ``P`` for ``warm_steps`` steps, fit a Gaussian KDE
       to the rewards seen and freeze ``threshold = F_N^{-1}(c)``. With
       ``rewards_known=False`` the reward profile is first estimated by a
       ``10 * s`` step exploration and refined as states get visited.
    2. Iterate: refresh the tilted row of the current state, advance the
       tilted chain and the original chain one step, take the slow step on
       ``zeta`` with the tilted reward, then the fast step on ``V``.
    3. Stop once ``zeta`` has spanned at most ``tol`` over the last
       ``window`` iterations, or after ``cap`` iterations.

    Defaults: ``zeta0 = +1`` (``-1`` for the lower tail); ``i0`` the
    highest-reward state (lowest for the lower tail); the tilted chain
    starts at ``i0`` (``tilted_start``) while the original chain continues
    from the end of the warm start; ``offset`` (see :class:`SaState`)
    defaults to the threshold. Pass ``offset=0.0`` for the untranslated
    update, which is accurate when it settles but can lock onto a
    mid-reward state early on. Numerical errors carry the failing
    iteration in ``exc.iteration``.
    """
    if tail not in (_UPPER, _LOWER):
        raise InvalidParameterError(f"tail must be 'upper' or 'lower', got {tail!r}")
    if not 0.0 < c < 1.0:
        raise InvalidParameterError(f"c must lie in (0, 1), got {c}")
    if schedule.a(0) > 1.0:
        raise InvalidParameterError(
            f"a(0) = {schedule.a(0)} > 1 can drive V negative; use k <= 2"
        )
    if warm_steps < 1 or cap < 1:
        raise InvalidParameterError("warm_steps and cap must be positive")
    if window < 2:
        raise InvalidParameterError(f"window must be at least 2, got {window}")
    rng = np.random.default_rng(rng)
    s = chain.s
    upper = tail == _UPPER

    # -- warm start ---------------------------------------------------------
    start = int(rng.integers(s))
    if rewards_known:
        g = np.array(chain.g, dtype=float)
    else:
        sampler = chain_sampler(chain, start)
        g = estimate_rewards_by_exploration(sampler, s, rng)
    path = simulate_path(chain.P, start, warm_steps, rng)
    if not rewards_known:
        g[path] = chain.g[path]
    kde = fit_kde(chain.g[path[1:]], bandwidth)
    threshold = kde.inverse_cdf(c)

    if i0 is None:
        i0 = int(np.argmax(g) if upper else np.argmin(g))
    if zeta0 is None:
        zeta0 = 1.0 if upper else -1.0
    if not 0 <= i0 < s:
        raise InvalidParameterError(f"i0={i0} is not a state of a {s}-state chain")
    if tilted_start is None:
        tilted_start = i0
    work = MarkovChain(chain.P, g)
    state = SaState.initial(
        work, threshold, int(tilted_start), i0=i0, zeta0=zeta0, tail=tail,
        offset=threshold if offset is None else float(offset),
    )

    # -- main loop ------------------------------------------------------------
    P = chain.P
    cum_orig = [row.tolist() for row in np.cumsum(P, axis=1)]
    known = np.zeros(s, dtype=bool) if not rewards_known else None
    if known is not None:
        known[path] = True

    zetas = np.empty(cap)
    avgs = np.empty(cap)
    thresholds = np.empty(cap) if update_threshold else None
    freq_orig = np.zeros(s, dtype=np.int64)
    freq_tilt = np.zeros(s, dtype=np.int64)
    spread = _WindowRange(window)
    pending: list[float] = []
    x = state.current_state
    x_orig = int(path[-1])
    reward_sum = 0.0
    warned = False
    terminated_at = None
    span = float(np.max(np.abs(g - state.offset)))
    t = 0
    block = 8192
    u_tilt = u_orig = None

    for t in range(cap):
        j = t % block
        if j == 0:
            u_tilt = rng.random(block).tolist()
            u_orig = rng.random(block).tolist()
        try:
            row = tilted_row_update(state, work, x)
            y = _sample_row(np.cumsum(row).tolist(), u_tilt[j])
            x_orig = _sample_row(cum_orig[x_orig], u_orig[j])
            if known is not None:
                for st in (y, x_orig):
                    if not known[st]:
                        g[st] = chain.g[st]
                        known[st] = True
                        work = MarkovChain(chain.P, g)
                        span = float(np.max(np.abs(g - state.offset)))
            new_zeta = slow_update(state.zeta, schedule.b(t), state.threshold, g[y], tail)
            fast_update(state, work, x, y, schedule)
        except NumericalError as exc:
            exc.iteration = t
            raise
        state.zeta = new_zeta
        state.iter += 1
        state.current_state = x = y

        if not warned and abs(new_zeta) * span > _EXP_WARN:
            warnings.warn(
                f"|zeta| * reward span reached {abs(new_zeta) * span:.1f} at iteration {t}; "
                "exp() is near overflow, consider rescaling the rewards",
                RewardScaleWarning,
                stacklevel=2,
            )
            warned = True

        freq_tilt[y] += 1
        freq_orig[x_orig] += 1
        reward_sum += g[y]
        zetas[t] = new_zeta
        avgs[t] = reward_sum / (t + 1)

        if update_threshold:
            pending.append(float(chain.g[x_orig]))
            if len(pending) >= refit_every:
                kde = kde.update(pending)
                pending.clear()
                state.threshold = kde.inverse_cdf(c)
            thresholds[t] = state.threshold

        if spread.push(new_zeta) <= tol and t + 1 >= window:
            terminated_at = t + 1
            break

    n = state.iter
    return RunTrace(
        zeta_series=zetas[:n].copy(),
        avg_reward_series=avgs[:n].copy(),
        threshold=state.threshold,
        freq_orig=freq_orig,
        freq_tilted=freq_tilt,
        terminated_at=terminated_at,
        final_state=state,
        kernel=state.kernel_estimate(work),
        rewards=g.copy(),
        c=float(c),
        kde=kde,
        threshold_series=thresholds[:n].copy() if update_threshold else None,
    )
