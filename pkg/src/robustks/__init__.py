"""Robust (trimmed) two-sample KS tests on logit-gap distributions."""

__version__ = "0.1.0"

from robustks.errors import (
    DataValidationError,
    NumericalFailure,
    ThresholdValidityError,
)
from robustks.ecdf import Ecdf, StepCdf, dkw_threshold, ecdf_from_samples, ks_distance
from robustks.trimming import TrimmingFunction, min_trimmed_ks
from robustks.robust_test import AlphaEstimate, TestDecision, estimate_alpha
from robustks.model_metrics import LogitGapMatrix

__all__ = [
    "AlphaEstimate",
    "DataValidationError",
    "Ecdf",
    "LogitGapMatrix",
    "NumericalFailure",
    "StepCdf",
    "TestDecision",
    "ThresholdValidityError",
    "TrimmingFunction",
    "dkw_threshold",
    "ecdf_from_samples",
    "estimate_alpha",
    "ks_distance",
    "min_trimmed_ks",
]
