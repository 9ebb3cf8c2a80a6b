"""Gaussian kernel density surrogate for the stationary reward distribution.

The stationary law of ``g(X_n)`` on a finite chain is a step function. The
conditioning threshold is read off a smoothed version of it instead: a
Gaussian KDE whose CDF is continuous and strictly increasing, so its inverse
is well defined for every ``c`` in ``(0, 1)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from acvar.errors import InvalidParameterError

DEFAULT_BANDWIDTH = 0.02


class MultimodalityWarning(UserWarning):
    """Bandwidth is not below the smallest gap between distinct rewards."""


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Gaussian KDE over reward samples.

    Samples are stored compressed as distinct ``values`` with integer
    ``counts``; rewards of a finite chain repeat heavily, so this keeps CDF
    evaluation at ``O(#distinct rewards)`` however long the warm start was.
    """

    values: np.ndarray
    counts: np.ndarray
    bandwidth: float

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def total(self) -> float:
        # total kernel weight; equals n for sample counts, but the CDF also
        # accepts fractional weights (e.g. a stationary law over reward levels)
        return float(self.counts.sum())

    @property
    def bracket(self) -> tuple[float, float]:
        h = self.bandwidth
        return float(self.values[0] - 10 * h), float(self.values[-1] + 10 * h)

    def cdf(self, x):
        """Mixture CDF ``(1/N) sum_i Phi((x - sample_i) / h)``; vectorized over ``x``."""
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.values) / self.bandwidth
        out = ndtr(z) @ self.counts / self.total
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.values) / self.bandwidth
        dens = np.exp(-0.5 * z * z) @ self.counts
        out = dens / (self.total * self.bandwidth * np.sqrt(2 * np.pi))
        return float(out) if out.ndim == 0 else out

    def inverse_cdf(self, c: float, xtol: float = 1e-12) -> float:
        """The ``x`` with ``cdf(x) = c``, by bisection.

        Newton is avoided on purpose: between well-separated kernels the CDF
        is almost flat and Newton steps shoot off. In such a gap the
        floating-point CDF can equal ``c`` on a whole interval; the two
        bisections below find its ends and the midpoint is returned, which
        keeps symmetric models symmetric.
        """
        if not 0.0 < c < 1.0:
            raise InvalidParameterError(f"c must lie in (0, 1), got {c}")
        lo, hi = self.bracket
        width = hi - lo
        # extreme c can fall outside the default bracket; widen until it holds
        while self._excess(lo, c) >= 0:
            lo -= width
            width *= 2
        while self._excess(hi, c) <= 0:
            hi += width
            width *= 2
        left = self._bisect(lo, hi, c, strict=True, xtol=xtol)
        right = self._bisect(lo, hi, c, strict=False, xtol=xtol)
        return 0.5 * (left + right)

    def _excess(self, x: float, c: float) -> float:
        """``N * (cdf(x) - c)`` without the ``1 - tiny`` rounding of upper tails.

        Kernels centred left of ``x`` contribute ``1 - Phi(-z)`` and the rest
        ``Phi(z)``; summing the integer part separately keeps every small
        term exact down to underflow.
        """
        z = (x - self.values) / self.bandwidth
        right = z > 0
        whole = self.counts[right].sum() - c * self.total
        return float(whole + ndtr(z[~right]) @ self.counts[~right] - ndtr(-z[right]) @ self.counts[right])

    def _bisect(self, lo: float, hi: float, c: float, strict: bool, xtol: float) -> float:
        # strict: last x with cdf(x) < c; otherwise last x with cdf(x) <= c
        while hi - lo >= xtol:
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            e = self._excess(mid, c)
            if e < 0 or (not strict and e == 0):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def update(self, samples) -> KdeModel:
        """New model with ``samples`` appended (the model itself is immutable)."""
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            return self
        merged = np.concatenate([np.repeat(self.values, self.counts.astype(np.int64)), samples])
        return fit_kde(merged, self.bandwidth, warn=False)

    def multimodal(self) -> bool:
        """True when the bandwidth is below every gap between distinct sample values."""
        if self.values.size < 2:
            return True
        return bool(self.bandwidth < np.min(np.diff(self.values)))


def fit_kde(samples, bandwidth: float = DEFAULT_BANDWIDTH, warn: bool = True) -> KdeModel:
    """Fit a Gaussian KDE with a fixed bandwidth to reward samples.

    Emits :class:`MultimodalityWarning` when ``bandwidth`` is at least the
    smallest gap between distinct rewards, in which case neighbouring reward
    levels blur into one mode.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise InvalidParameterError("cannot fit a KDE to an empty sample")
    if not np.all(np.isfinite(samples)):
        raise InvalidParameterError("KDE samples must be finite")
    if not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {bandwidth}")
    values, counts = np.unique(samples, return_counts=True)
    model = KdeModel(values, counts.astype(float), float(bandwidth))
    model.values.setflags(write=False)
    model.counts.setflags(write=False)
    if warn and not model.multimodal():
        gap = float(np.min(np.diff(values)))
        warnings.warn(
            f"bandwidth {bandwidth} >= smallest reward gap {gap:.4g}; "
            "the smoothed reward density loses its per-state modes",
            MultimodalityWarning,
            stacklevel=2,
        )
    return model


def cdf(model: KdeModel, x):
    return model.cdf(x)


def inverse_cdf(model: KdeModel, c: float) -> float:
    return model.inverse_cdf(c)
