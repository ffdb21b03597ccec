"""Empirical CDFs, the sup-norm (KS) distance between them, and DKW thresholds.

Both CDF types here are right-continuous step functions that jump only at the
points listed in ``support``.  The supremum of ``|F - G|`` over the real line is
therefore attained on the merged support, which is what :func:`ks_distance`
evaluates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from robustks.errors import DataValidationError, ThresholdValidityError

# Two-sample DKW with leading constant 2 is only valid above this sample size.
MIN_DKW_SAMPLES = 459


@dataclass(frozen=True)
class StepCdf:
    """Right-continuous CDF that equals ``values[i]`` on ``[support[i], support[i+1])``.

    It is 0 left of ``support[0]``; ``values[-1]`` must be 1.
    """

    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if support.ndim != 1 or support.shape != values.shape or support.size == 0:
            raise DataValidationError("support and values must be equal-length, nonempty 1-D arrays")
        if np.any(np.diff(support) <= 0):
            raise DataValidationError("support must be strictly increasing")
        if np.any(np.diff(values) < 0) or values[0] < 0 or abs(values[-1] - 1.0) > 1e-12:
            raise DataValidationError("values must be nondecreasing in [0, 1] and end at 1")
        support.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.isnan(x)):
            raise DataValidationError("cannot evaluate a CDF at NaN")
        idx = np.searchsorted(self.support, x, side="right")
        padded = np.concatenate(([0.0], self.values))
        out = padded[idx]
        return float(out) if out.ndim == 0 else out

    @property
    def jumps(self) -> np.ndarray:
        """Probability mass at each support point."""
        return np.diff(self.values, prepend=0.0)


@dataclass(frozen=True)
class Ecdf:
    """Empirical CDF of a finite sample; ties are kept as repeated values."""

    sorted_samples: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        arr = np.asarray(self.sorted_samples, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DataValidationError("Ecdf needs a nonempty 1-D sample")
        if not np.all(np.isfinite(arr)):
            raise DataValidationError("Ecdf samples must be finite")
        if np.any(np.diff(arr) < 0):
            arr = np.sort(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "sorted_samples", arr)
        object.__setattr__(self, "n", int(arr.size))

    def __call__(self, x):
        return ecdf_eval(self, x)

    @property
    def support(self) -> np.ndarray:
        return np.unique(self.sorted_samples)

    @property
    def jumps(self) -> np.ndarray:
        _, counts = np.unique(self.sorted_samples, return_counts=True)
        return counts / self.n

    def as_step(self) -> StepCdf:
        support, counts = np.unique(self.sorted_samples, return_counts=True)
        values = np.cumsum(counts) / self.n
        values[-1] = 1.0
        return StepCdf(support, values)


def ecdf_from_samples(samples) -> Ecdf:
    """Build an :class:`Ecdf`; raises :class:`DataValidationError` on empty or non-finite input."""
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise DataValidationError("cannot build an ECDF from an empty sample")
    if not np.all(np.isfinite(arr)):
        raise DataValidationError("ECDF samples must be finite (no NaN or inf)")
    return Ecdf(np.sort(arr))


def ecdf_eval(F: Ecdf, x):
    """Return ``#{samples <= x} / n`` for scalar or array ``x``."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise DataValidationError("cannot evaluate an ECDF at NaN")
    out = np.searchsorted(F.sorted_samples, x, side="right") / F.n
    return float(out) if out.ndim == 0 else out


def merged_support(F, G) -> np.ndarray:
    """Sorted, de-duplicated union of the jump points of two step CDFs."""
    return np.union1d(F.support, G.support)


def ks_distance(F, G) -> float:
    """Sup-norm distance between two step CDFs, evaluated exactly at their jump points."""
    x = merged_support(F, G)
    return float(np.max(np.abs(F(x) - G(x))))


def dkw_threshold(n: int, delta: float) -> float:
    """KS threshold ``tau`` solving ``2 exp(-2 n tau^2) = delta``.

    Refuses ``n <= 458``: below that the two-sample DKW bound does not hold
    with leading constant 2 and the resulting test would be anti-conservative.
    """
    if not 0.0 < delta < 1.0:
        raise DataValidationError(f"delta must lie in (0, 1), got {delta!r}")
    if n < MIN_DKW_SAMPLES:
        raise ThresholdValidityError(
            f"n={n} test points is too few: the DKW threshold with leading constant C=2 "
            f"requires n > 458"
        )
    return math.sqrt(math.log(2.0 / delta) / (2.0 * n))
