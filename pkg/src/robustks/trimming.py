"""Alpha-trimmings of a step CDF and the trimmed KS distance.

An alpha-trimming of a discrete distribution ``P`` is any ``Q`` whose mass at
each atom is at most ``1/(1 - alpha)`` times the mass ``P`` puts there.  In CDF
terms, ``Q = h o F_P`` for a nondecreasing ``h: [0, 1] -> [0, 1]`` with
``h(0) = 0``, ``h(1) = 1`` and slope at most ``1/(1 - alpha)``.

The trimmed distance ``min_h ||G - h o F||_inf`` is found by bisection on the
distance ``t``.  For fixed ``t`` the set of values ``h`` may take at each
distinct level of ``F`` is an interval, and these intervals can be propagated
left to right in one pass, so each feasibility check is linear in the support
size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from robustks.ecdf import Ecdf, StepCdf, ks_distance, merged_support
from robustks.errors import DataValidationError

SLOPE_EPS = 1e-12
# Slack on lo <= hi comparisons so exact ties (e.g. t equal to the plain KS
# distance at alpha=0) are not lost to rounding.
FEAS_EPS = 1e-12
ORACLE_MAX_SUPPORT = 8


@dataclass(frozen=True)
class TrimmingFunction:
    """Piecewise-linear ``h`` through ``(breakpoints[j], values[j])``."""

    breakpoints: np.ndarray
    values: np.ndarray
    alpha: float

    def __post_init__(self):
        u = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        _check_alpha(self.alpha)
        if u.ndim != 1 or u.shape != v.shape or u.size < 2:
            raise DataValidationError("breakpoints and values must be equal-length 1-D arrays (>= 2 points)")
        if u[0] != 0.0 or u[-1] != 1.0 or np.any(np.diff(u) <= 0):
            raise DataValidationError("breakpoints must increase strictly from 0 to 1")
        if v[0] != 0.0 or v[-1] != 1.0:
            raise DataValidationError("a trimming function must satisfy h(0)=0 and h(1)=1")
        dv = np.diff(v)
        if np.any(dv < 0):
            raise DataValidationError("trimming function values must be nondecreasing")
        limit = np.diff(u) / (1.0 - self.alpha) + SLOPE_EPS
        if np.any(dv > limit):
            j = int(np.argmax(dv - limit))
            raise DataValidationError(
                f"slope on [{u[j]:.6g}, {u[j + 1]:.6g}] exceeds 1/(1-alpha) for alpha={self.alpha}"
            )
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", u)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "alpha", float(self.alpha))

    def __call__(self, u):
        out = np.interp(u, self.breakpoints, self.values)
        return float(out) if np.ndim(out) == 0 else out

    @classmethod
    def identity(cls, alpha: float = 0.0) -> "TrimmingFunction":
        return cls(np.array([0.0, 1.0]), np.array([0.0, 1.0]), alpha)


@dataclass(frozen=True)
class TrimmedDistanceResult:
    distance: float
    witness: TrimmingFunction
    alpha: float
    iterations: int


def _check_alpha(alpha):
    if not (0.0 <= alpha < 1.0) or not math.isfinite(alpha):
        raise DataValidationError(f"alpha must lie in [0, 1), got {alpha!r}")


def apply_trimming(h: TrimmingFunction, F) -> StepCdf:
    """Trimmed CDF ``x -> h(F(x))`` on the support of ``F``."""
    if not isinstance(h, TrimmingFunction):
        raise DataValidationError("h must be a TrimmingFunction")
    support = F.support
    values = np.clip(h(F(support)), 0.0, 1.0)
    values[-1] = 1.0
    return StepCdf(support, np.maximum.accumulate(values))


def cdf_pair_values(target, source):
    """Evaluate both CDFs on their merged support."""
    x = merged_support(target, source)
    return target(x), source(x)


def _validate_levels(vals, name):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise DataValidationError(f"{name} must be a nonempty 1-D vector")
    if np.any(vals < 0.0) or np.any(vals > 1.0) or np.any(np.diff(vals) < 0):
        raise DataValidationError(f"{name} must be nondecreasing values in [0, 1]")
    return vals


def _level_bands(target_vals, source_vals, t):
    """Distinct source levels (with 0 and 1 added) and the band each pins h into."""
    starts = np.flatnonzero(np.r_[True, np.diff(source_vals) > 0])
    levels = source_vals[starts]
    band_lo = np.maximum.reduceat(target_vals, starts) - t
    band_hi = np.minimum.reduceat(target_vals, starts) + t
    if levels[0] > 0.0:
        levels = np.r_[0.0, levels]
        band_lo = np.r_[0.0, band_lo]
        band_hi = np.r_[0.0, band_hi]
    else:
        band_hi[0] = min(band_hi[0], 0.0)
    if levels[-1] < 1.0:
        levels = np.r_[levels, 1.0]
        band_lo = np.r_[band_lo, 1.0]
        band_hi = np.r_[band_hi, 1.0]
    else:
        band_lo[-1] = 1.0
        band_hi[-1] = min(band_hi[-1], 1.0)
    return levels, np.maximum(band_lo, 0.0), np.minimum(band_hi, 1.0)


def _propagate(levels, band_lo, band_hi, scale):
    """Reachable intervals ``[lo_j, hi_j]`` for ``h(levels[j])``.

    ``hi_j = min(hi_{j-1} + (u_j - u_{j-1}) * scale, band_hi_j)`` unrolls to a
    running minimum of ``band_hi - u * scale``; ``scale`` may be a column
    vector to handle several alphas at once.
    """
    lo = np.maximum.accumulate(band_lo)
    ramp = levels * scale
    hi = ramp + np.minimum.accumulate(band_hi - ramp, axis=-1)
    return lo, hi


def band_feasible(target_vals, source_vals, alpha: float, t: float) -> bool:
    """True iff some alpha-trimming of the source stays within ``t`` of the target.

    Both vectors are CDF values on the merged support, so the check covers the
    whole real line.
    """
    target_vals = _validate_levels(target_vals, "target_vals")
    source_vals = _validate_levels(source_vals, "source_vals")
    if target_vals.shape != source_vals.shape:
        raise DataValidationError("target_vals and source_vals must have equal length")
    _check_alpha(alpha)
    if t < 0:
        raise DataValidationError("t must be nonnegative")
    levels, band_lo, band_hi = _level_bands(target_vals, source_vals, t)
    lo, hi = _propagate(levels, band_lo, band_hi, 1.0 / (1.0 - alpha))
    return bool(np.all(lo <= hi + FEAS_EPS))


def band_feasible_grid(target_vals, source_vals, alphas, t: float) -> np.ndarray:
    """Vectorised :func:`band_feasible` over several trimming levels (no input validation)."""
    alphas = np.asarray(alphas, dtype=float)
    levels, band_lo, band_hi = _level_bands(
        np.asarray(target_vals, dtype=float), np.asarray(source_vals, dtype=float), t
    )
    lo, hi = _propagate(levels, band_lo, band_hi, (1.0 / (1.0 - alphas))[:, None])
    return np.all(lo <= hi + FEAS_EPS, axis=1)


def _witness(target_vals, source_vals, alpha, t) -> TrimmingFunction:
    levels, band_lo, band_hi = _level_bands(target_vals, source_vals, t)
    scale = 1.0 / (1.0 - alpha)
    lo, hi = _propagate(levels, band_lo, band_hi, scale)
    h = np.empty_like(levels)
    h[-1] = 1.0
    for j in range(levels.size - 2, 0, -1):
        step = (levels[j + 1] - levels[j]) * scale
        hard_lo = max(0.0, h[j + 1] - step)
        hard_hi = min(h[j + 1], levels[j] * scale, 1.0)
        a, b = max(lo[j], hard_lo), min(hi[j], hard_hi)
        mid = 0.5 * (a + b) if a <= b else 0.5 * (lo[j] + hi[j])
        h[j] = min(max(mid, hard_lo), hard_hi)
    h[0] = 0.0
    return TrimmingFunction(levels, h, alpha)


def min_trimmed_ks(target, source, alpha: float, tol: float = 1e-9) -> TrimmedDistanceResult:
    """Smallest sup-norm distance from ``target`` to an alpha-trimming of ``source``.

    Bisection runs a fixed number of halvings of ``[0, ks_distance]``, so the
    returned distance is the smallest feasible point of a fixed dyadic grid.
    That keeps the result exactly nonincreasing in ``alpha``.
    """
    _check_alpha(alpha)
    if not tol > 0:
        raise DataValidationError("tol must be positive")
    target_vals, source_vals = cdf_pair_values(target, source)
    upper = ks_distance(target, source)
    if band_feasible(target_vals, source_vals, alpha, 0.0):
        return TrimmedDistanceResult(0.0, _witness(target_vals, source_vals, alpha, 0.0), float(alpha), 0)
    n_iter = max(0, math.ceil(math.log2(upper / tol))) if upper > tol else 0
    lo, hi = 0.0, upper
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if band_feasible(target_vals, source_vals, alpha, mid):
            hi = mid
        else:
            lo = mid
    return TrimmedDistanceResult(hi, _witness(target_vals, source_vals, alpha, hi), float(alpha), n_iter)


def trimmed_ks_curve(target, source, alphas, tol: float = 1e-9) -> np.ndarray:
    return np.array([min_trimmed_ks(target, source, a, tol).distance for a in alphas])


def _window_min(arr, left, right):
    """``out[i] = min(arr[i-left : i+right+1])`` with out-of-range entries ignored."""
    n = arr.size
    w = left + right + 1
    padded = np.concatenate((np.full(left, np.inf), arr, np.full(right, np.inf)))
    n_blocks = -(-padded.size // w)
    padded = np.concatenate((padded, np.full(n_blocks * w - padded.size, np.inf)))
    blocks = padded.reshape(n_blocks, w)
    prefix = np.minimum.accumulate(blocks, axis=1).ravel()
    suffix = np.minimum.accumulate(blocks[:, ::-1], axis=1)[:, ::-1].ravel()
    start = np.arange(n)
    end = start + w - 1
    tail = np.concatenate((prefix, np.full(w, np.inf)))
    return np.minimum(suffix[start], tail[end])


def trimmed_ks_oracle(target, source: Ecdf, alpha: float, grid_step: float = 1e-3) -> float:
    """Brute-force trimmed KS distance by dynamic programming over a value lattice.

    ``h`` is restricted to multiples of ``delta = 1 / (n * p * m)`` where
    ``1 - alpha = p / q`` and ``m`` is the smallest integer making
    ``delta <= grid_step``.  Source levels ``k / n`` and slope caps
    ``k / (n (1 - alpha))`` are then whole numbers of lattice cells, so every
    constraint is checked exactly and flooring the optimal ``h`` onto the
    lattice stays feasible: the result lies in ``[d, d + delta]`` for the true
    distance ``d``.  Only meant for tiny supports.
    """
    _check_alpha(alpha)
    if not 0 < grid_step <= 1e-3:
        raise DataValidationError("grid_step must lie in (0, 1e-3]")
    if not isinstance(source, Ecdf):
        raise DataValidationError("the oracle needs an empirical (Ecdf) source")
    if source.support.size > ORACLE_MAX_SUPPORT:
        raise DataValidationError(
            f"oracle refuses sources with more than {ORACLE_MAX_SUPPORT} distinct values"
        )
    keep = Fraction(1.0 - alpha).limit_denominator(10_000)
    if abs(float(keep) - (1.0 - alpha)) > 1e-12:
        raise DataValidationError(f"alpha={alpha!r} is not a short rational; oracle lattice undefined")
    n, p, q = source.n, keep.numerator, keep.denominator
    m = max(1, math.ceil(1.0 / (n * p * grid_step)))
    cells = n * p * m
    if cells > 5_000_000:
        raise DataValidationError("oracle lattice too large")

    target_vals, source_vals = cdf_pair_values(target, source)
    starts = np.flatnonzero(np.r_[True, np.diff(source_vals) > 0])
    counts = np.rint(source_vals[starts] * n).astype(np.int64)
    t_max = np.maximum.reduceat(target_vals, starts)
    t_min = np.minimum.reduceat(target_vals, starts)
    if counts[0] > 0:
        counts, t_max, t_min = np.r_[0, counts], np.r_[0.0, t_max], np.r_[0.0, t_min]

    h = np.arange(cells + 1) / cells

    def violation(j):
        return np.maximum(t_max[j] - h, h - t_min[j])

    cost = np.full(cells + 1, np.inf)
    cost[0] = violation(0)[0]
    for j in range(1, counts.size):
        cap = int((counts[j] - counts[j - 1]) * q * m)
        cost = np.maximum(_window_min(cost, cap, 0), violation(j))
    return float(cost[-1])
