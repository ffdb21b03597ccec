"""Logit-gap bookkeeping: predictions, accuracy, churn, leave-one-out ensembles, histograms."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from robustks.ecdf import Ecdf, ecdf_from_samples
from robustks.errors import DataValidationError


@dataclass(frozen=True)
class LogitGapMatrix:
    """Logit gaps of ``M`` models (rows) on ``N'`` shared test points (columns)."""

    gaps: np.ndarray
    labels: np.ndarray
    model_ids: tuple = None
    point_ids: tuple = None

    def __post_init__(self):
        gaps = np.array(self.gaps, dtype=float, copy=True)
        if gaps.ndim == 1:
            gaps = gaps[None, :]
        if gaps.ndim != 2 or gaps.shape[0] < 1 or gaps.shape[1] < 1:
            raise DataValidationError("gaps must be a nonempty M x N matrix")
        if not np.all(np.isfinite(gaps)):
            r, c = np.argwhere(~np.isfinite(gaps))[0]
            raise DataValidationError(f"non-finite gap for model row {r}, point column {c}")
        labels = np.asarray(self.labels)
        if labels.shape != (gaps.shape[1],):
            raise DataValidationError(f"expected {gaps.shape[1]} labels, got shape {labels.shape}")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataValidationError("labels must be 0 or 1")
        labels = labels.astype(np.int64)
        m, n = gaps.shape
        model_ids = tuple(str(s) for s in self.model_ids) if self.model_ids is not None else tuple(
            f"model_{k}" for k in range(m)
        )
        point_ids = tuple(str(s) for s in self.point_ids) if self.point_ids is not None else tuple(
            f"p{j}" for j in range(n)
        )
        if len(model_ids) != m or len(point_ids) != n:
            raise DataValidationError("model_ids / point_ids do not match the gap matrix shape")
        gaps.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "gaps", gaps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "model_ids", model_ids)
        object.__setattr__(self, "point_ids", point_ids)

    @property
    def n_models(self) -> int:
        return self.gaps.shape[0]

    @property
    def n_points(self) -> int:
        return self.gaps.shape[1]

    def _check_index(self, k):
        if not (isinstance(k, (int, np.integer)) and 0 <= k < self.n_models):
            raise IndexError(f"model index {k} out of range for {self.n_models} models")


@dataclass(frozen=True)
class HistogramData:
    bin_edges: np.ndarray
    probabilities: np.ndarray
    counts: np.ndarray
    envelope_min: np.ndarray | None = None
    envelope_max: np.ndarray | None = None


def logit_gap(m_plus, m_minus):
    """``m_plus - m_minus``; works elementwise on arrays."""
    m_plus = np.asarray(m_plus, dtype=float)
    m_minus = np.asarray(m_minus, dtype=float)
    if not (np.all(np.isfinite(m_plus)) and np.all(np.isfinite(m_minus))):
        raise DataValidationError("logits must be finite")
    out = m_plus - m_minus
    return float(out) if out.ndim == 0 else out


def predict(gap):
    """Predicted class: 1 when the gap is >= 0 (a gap of exactly 0 goes to class 1)."""
    out = (np.asarray(gap) >= 0).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def _same_length(a, b, what):
    a, b = np.asarray(a, dtype=float), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataValidationError(f"{what}: vectors must be 1-D with equal length ({a.shape} vs {b.shape})")
    if a.size == 0:
        raise DataValidationError(f"{what}: empty input")
    return a, b


def test_accuracy(gaps_row, labels) -> float:
    gaps_row, labels = _same_length(gaps_row, labels, "test_accuracy")
    return float(np.mean(predict(gaps_row) == labels))


test_accuracy.__test__ = False  # keep pytest from collecting it


def churn(gaps_a, gaps_b) -> float:
    """Fraction of points where the two gap vectors predict different classes."""
    gaps_a, gaps_b = _same_length(gaps_a, gaps_b, "churn")
    return float(np.mean(predict(gaps_a) != predict(gaps_b)))


def looe_gaps(matrix: LogitGapMatrix, exclude: int) -> np.ndarray:
    """Per-point mean gap over every model except ``exclude``."""
    if matrix.n_models < 2:
        raise DataValidationError("a leave-one-out ensemble needs at least 2 models")
    matrix._check_index(exclude)
    keep = np.arange(matrix.n_models) != exclude
    return matrix.gaps[keep].mean(axis=0)


def ensemble_gaps(matrix: LogitGapMatrix) -> np.ndarray:
    return matrix.gaps.mean(axis=0)


def candidate_cdf(matrix: LogitGapMatrix, index: int) -> Ecdf:
    matrix._check_index(index)
    return ecdf_from_samples(matrix.gaps[index])


def looe_cdf(matrix: LogitGapMatrix, exclude: int) -> Ecdf:
    return ecdf_from_samples(looe_gaps(matrix, exclude))


def histogram(gaps, bin_edges, clip: bool = False) -> HistogramData:
    """Normalised histogram; bins are ``[e_i, e_{i+1})`` except the last, which is closed.

    Values outside the edges raise unless ``clip`` is set, in which case they
    are moved onto the nearest edge.
    """
    gaps = np.asarray(gaps, dtype=float).ravel()
    edges = np.asarray(bin_edges, dtype=float)
    if gaps.size == 0:
        raise DataValidationError("histogram of an empty sample")
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DataValidationError("bin edges must be strictly ascending with at least 2 entries")
    if clip:
        gaps = np.clip(gaps, edges[0], edges[-1])
    elif gaps.min() < edges[0] or gaps.max() > edges[-1]:
        raise DataValidationError("gaps fall outside the bin edges (pass clip=True to clamp)")
    counts, _ = np.histogram(gaps, bins=edges)
    return HistogramData(edges, counts / gaps.size, counts)


def histogram_envelope(matrix: LogitGapMatrix, bin_edges, clip: bool = False) -> HistogramData:
    """Histogram of the full-ensemble mean gaps plus per-bin min/max over single models."""
    if matrix.n_models < 2:
        raise DataValidationError("an envelope needs at least 2 models")
    ens = histogram(ensemble_gaps(matrix), bin_edges, clip)
    per_model = np.array([histogram(row, bin_edges, clip).probabilities for row in matrix.gaps])
    return HistogramData(
        ens.bin_edges, ens.probabilities, ens.counts, per_model.min(axis=0), per_model.max(axis=0)
    )


def auto_edges(values, n_bins: int) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if not n_bins >= 1:
        raise DataValidationError("need at least one bin")
    if math.isclose(lo, hi):
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)
