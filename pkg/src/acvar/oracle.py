"""Exact ACVaR solver and a brute-force Monte Carlo check of it.

For a chain with rewards ``g``, the tilted matrix ``M_z(i, j) = exp(z g(i)) p(i, j)``
has a Perron pair ``(rho_z, V_z)``. ``Lambda(z) = ln rho_z`` is the scaled
log-MGF of the cumulative reward; the tilt solving ``Lambda'(z) = alpha``
gives the kernel of the chain conditioned on its long-run average reaching
``alpha``, and ACVaR is the stationary mean reward under that kernel.

Everything here is deterministic and exact up to solver tolerances, which
makes it the reference the stochastic-approximation module is tested
against. :func:`mc_conditioning_oracle` checks the reference itself by
rejection sampling finite paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from acvar.errors import (
    InvalidParameterError,
    NoAcceptanceError,
    SpectralError,
    TiltOverflowError,
    UnattainableThresholdError,
)
from acvar.markov import MarkovChain, max_cycle_mean, stationary_distribution

_LOG_MAX = math.log(np.finfo(float).max)
# largest z * (reward span) the bisection will explore before giving up
_MAX_TILT_SPAN = 700.0
# Perron entries below this are too close to underflow for a relative test
_TINY = 1e-250
_UPPER, _LOWER = "upper", "lower"


def _check_tail(tail: str) -> None:
    if tail not in (_UPPER, _LOWER):
        raise InvalidParameterError(f"tail must be 'upper' or 'lower', got {tail!r}")


@dataclass(frozen=True, eq=False)
class PerronPair:
    rho: float
    V: np.ndarray
    i0: int


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """Everything the exact route knows about one (chain, threshold) pair.

    ``V_star`` is scaled so that ``V_star[i0] == 1``. ``log_rho_star`` is
    kept next to ``rho_star`` because the latter overflows first for steep
    tilts.
    """

    zeta_star: float
    rho_star: float
    log_rho_star: float
    V_star: np.ndarray
    p_star: np.ndarray
    pi_star: np.ndarray
    acvar: float
    alpha: float
    i0: int = 0
    tail: str = _UPPER

    def to_dict(self) -> dict:
        return {
            "zeta_star": self.zeta_star,
            "rho_star": self.rho_star,
            "log_rho_star": self.log_rho_star,
            "V_star": self.V_star.tolist(),
            "p_star": self.p_star.tolist(),
            "pi_star": self.pi_star.tolist(),
            "acvar": self.acvar,
            "alpha": self.alpha,
            "i0": self.i0,
            "tail": self.tail,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> OracleSolution:
        arrays = {k: np.asarray(data[k], dtype=float) for k in ("V_star", "p_star", "pi_star")}
        scalars = {k: data[k] for k in ("zeta_star", "rho_star", "log_rho_star", "acvar", "alpha", "i0", "tail")}
        return cls(**arrays, **scalars)


def tilted_matrix(chain: MarkovChain, zeta: float) -> np.ndarray:
    """``M(i, j) = exp(zeta * g(i)) * p(i, j)``."""
    expo = zeta * chain.g
    if not np.all(np.isfinite(expo)) or np.max(expo) > _LOG_MAX:
        raise TiltOverflowError(
            f"exp(zeta * g) overflows for zeta={zeta}; rescale the rewards so that "
            "zeta and the rewards are of comparable magnitude"
        )
    return np.exp(expo)[:, None] * chain.P


def perron_pair(M: np.ndarray, i0: int = 0, tol: float = 1e-12, max_sweeps: int = 1_000_000) -> PerronPair:
    """Perron eigenpair of a non-negative irreducible aperiodic matrix.

    Power iteration from the all-ones vector, renormalizing so that
    ``V[i0] == 1`` after every sweep; at the fixed point ``rho = (M V)[i0]``.
    The stopping test is componentwise relative: under a steep tilt ``V``
    spans many orders of magnitude, and the small entries decide the rows
    of the tilted kernel just as much as the large ones. Entries near
    underflow are left out of the test.
    """
    M = np.asarray(M, dtype=float)
    V = np.ones(M.shape[0])
    for _ in range(max_sweeps):
        W = M @ V
        rho = W[i0]
        if not rho > 0 or not np.isfinite(rho):
            raise SpectralError(f"power iteration broke down (reference component {rho!r})")
        W /= rho
        live = W > _TINY
        if np.all(np.abs(W - V)[live] < tol * W[live]):
            return PerronPair(float((M @ W)[i0]), W, i0)
        V = W
    raise SpectralError(f"Perron iteration did not converge in {max_sweeps} sweeps")


def _shift(chain: MarkovChain, zeta: float) -> float:
    # factor exp(zeta * shift) out of M so every entry stays <= 1
    return float(np.max(chain.g) if zeta >= 0 else np.min(chain.g))


def _tilted_perron(chain: MarkovChain, zeta: float, i0: int) -> tuple[float, PerronPair, float]:
    """(log rho, Perron pair of the shifted matrix, shift)."""
    shift = _shift(chain, zeta)
    M = np.exp(zeta * (chain.g - shift))[:, None] * chain.P
    pair = perron_pair(M, i0)
    return zeta * shift + math.log(pair.rho), pair, shift


def log_mgf(chain: MarkovChain, zeta: float, i0: int = 0) -> float:
    """``Lambda(zeta) = ln rho_zeta``, the limiting scaled log-MGF of the reward sum."""
    return _tilted_perron(chain, zeta, i0)[0]


def tilted_kernel(chain: MarkovChain, zeta: float, i0: int = 0) -> np.ndarray:
    """Kernel ``exp(z g(i)) p(i, j) V(j) / (rho V(i))`` of the z-conditioned chain."""
    _, pair, shift = _tilted_perron(chain, zeta, i0)
    weights = np.exp(zeta * (chain.g - shift)) / (pair.rho * pair.V)
    K = weights[:, None] * chain.P * pair.V[None, :]
    sums = K.sum(axis=1)
    if np.max(np.abs(sums - 1.0)) > 1e-8:
        raise SpectralError(f"tilted rows sum to {sums.min()}..{sums.max()}; eigen-equation not satisfied")
    return K / sums[:, None]


def lambda_prime(chain: MarkovChain, zeta: float, i0: int = 0) -> float:
    """``Lambda'(zeta)``: the stationary mean reward under the zeta-tilted kernel."""
    return float(stationary_distribution(tilted_kernel(chain, zeta, i0)) @ chain.g)


def solve_zeta_star(chain: MarkovChain, alpha: float, tail: str = _UPPER, xtol: float = 1e-10) -> float:
    """Maximizer of ``z * alpha - Lambda(z)`` over ``z >= 0`` (``z <= 0`` for the lower tail).

    Zero when ``alpha`` does not exceed the stationary mean (the boundary
    case); otherwise the root of the nondecreasing ``Lambda'(z) = alpha``,
    bracketed by doubling and then bisected.
    """
    _check_tail(tail)
    if not math.isfinite(alpha):
        raise InvalidParameterError(f"alpha must be finite, got {alpha}")
    if tail == _LOWER:
        # conditioning on a low average == upper-tail conditioning of -g
        z = solve_zeta_star(chain.with_rewards(-chain.g), -alpha, _UPPER, xtol)
        return -z if z else 0.0

    if np.ptp(chain.g) == 0.0:
        # constant rewards: every path averages g, so no tilt changes anything
        if alpha > chain.g[0]:
            raise UnattainableThresholdError(f"threshold {alpha} exceeds the constant reward {chain.g[0]}")
        return 0.0
    sup = max_cycle_mean(chain.P, chain.g)
    if alpha >= sup:
        raise UnattainableThresholdError(
            f"threshold {alpha} is not below the largest attainable long-run average {sup}"
        )
    if alpha <= lambda_prime(chain, 0.0):
        return 0.0

    span = float(np.ptp(chain.g))
    lo, hi = 0.0, 1.0
    while lambda_prime(chain, hi) <= alpha:
        lo, hi = hi, 2.0 * hi
        if hi * span > _MAX_TILT_SPAN:
            raise UnattainableThresholdError(
                f"threshold {alpha} needs a tilt beyond zeta={hi}; it is numerically unattainable"
            )
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if lambda_prime(chain, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def acvar_oracle(chain: MarkovChain, alpha: float, i0: int = 0, tail: str = _UPPER) -> OracleSolution:
    """Exact ACVaR at threshold ``alpha`` together with the tilted kernel behind it."""
    zeta = solve_zeta_star(chain, alpha, tail)
    log_rho, pair, _ = _tilted_perron(chain, zeta, i0)
    p_star = tilted_kernel(chain, zeta, i0)
    pi_star = stationary_distribution(p_star)
    rho = math.exp(log_rho) if log_rho < _LOG_MAX else math.inf
    return OracleSolution(
        zeta_star=zeta,
        rho_star=rho,
        log_rho_star=log_rho,
        V_star=pair.V,
        p_star=p_star,
        pi_star=pi_star,
        acvar=float(pi_star @ chain.g),
        alpha=float(alpha),
        i0=i0,
        tail=tail,
    )


def conditioned_expectation(solution: OracleSolution, h) -> float:
    """Long-run average of ``h`` along the conditioned chain: ``sum_i pi*(i) h(i)``."""
    h = np.asarray(h, dtype=float)
    if h.shape != solution.pi_star.shape:
        raise InvalidParameterError(f"h has shape {h.shape}, expected {solution.pi_star.shape}")
    return float(solution.pi_star @ h)


@dataclass(frozen=True, eq=False)
class McOracleResult:
    """Transition frequencies over accepted paths.

    Rows of ``kernel`` for states never left on an accepted path are NaN and
    ``defined`` is False there.
    """

    kernel: np.ndarray
    defined: np.ndarray
    counts: np.ndarray
    accepted: int
    num_paths: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.num_paths


def mc_conditioning_oracle(
    chain: MarkovChain,
    alpha: float,
    n: int,
    num_paths: int,
    rng: np.random.Generator,
    x0: int | None = None,
    tail: str = _UPPER,
    batch: int = 50_000,
) -> McOracleResult:
    """Rejection-sample length-``n`` paths whose average reward reaches ``alpha``.

    Paths start at ``x0`` or, when it is None, at a draw from the stationary
    law of ``P``. The average is over ``X_0 .. X_{n-1}`` and the ``n - 1``
    transitions of every accepted path are tallied.
    """
    _check_tail(tail)
    if n < 2:
        raise InvalidParameterError(f"path length must be at least 2, got {n}")
    if num_paths < 1:
        raise InvalidParameterError(f"num_paths must be positive, got {num_paths}")
    s, g = chain.s, chain.g
    cum = np.cumsum(chain.P, axis=1)
    last = np.array([np.flatnonzero(row > 0)[-1] for row in chain.P])
    pi = stationary_distribution(chain.P) if x0 is None else None

    counts = np.zeros((s, s), dtype=np.int64)
    accepted = 0
    done = 0
    while done < num_paths:
        m = min(batch, num_paths - done)
        done += m
        if x0 is None:
            x = np.minimum(np.searchsorted(np.cumsum(pi), rng.random(m), side="right"), s - 1)
        else:
            x = np.full(m, x0, dtype=np.int64)
        path = np.empty((m, n), dtype=np.int64)
        path[:, 0] = x
        for t in range(1, n):
            u = rng.random(m)
            nxt = (cum[x] <= u[:, None]).sum(axis=1)
            x = np.where(nxt >= s, last[x], nxt)
            path[:, t] = x
        avg = g[path].mean(axis=1)
        keep = avg >= alpha if tail == _UPPER else avg <= alpha
        acc = path[keep]
        accepted += acc.shape[0]
        if acc.size:
            flat = (acc[:, :-1] * s + acc[:, 1:]).ravel()
            counts += np.bincount(flat, minlength=s * s).reshape(s, s)

    if accepted == 0:
        raise NoAcceptanceError(
            f"no path of length {n} out of {num_paths} reached average {alpha}; "
            "use shorter paths, more paths, or a milder threshold"
        )
    rows = counts.sum(axis=1)
    defined = rows > 0
    kernel = np.full((s, s), np.nan)
    kernel[defined] = counts[defined] / rows[defined, None]
    return McOracleResult(kernel, defined, counts, accepted, num_paths)
