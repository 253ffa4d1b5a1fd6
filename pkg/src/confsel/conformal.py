"""Split-conformal calibration and width-based selection (EFCP / VFCP).

Calibration follows the ascending order-statistic rule: with m calibration
scores, the threshold is the r-th smallest with r = ceil((m + 1) * (1 - alpha)),
or +inf when r exceeds m. Selection picks the candidate family whose
calibrated set has the smallest width; the validity-first variant then
recalibrates the chosen family on a disjoint third fold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .families import NestedFamily, PredictionSet

# Relative nudge applied before ceil() so that float products like
# 100 * 0.9 = 90.000000000000014 still yield the mathematical rank.
_RANK_EPS = 4e-15


def conformal_rank(m: int, alpha: float) -> int:
    """Rank r = ceil((m + 1)(1 - alpha)) of the calibration order statistic."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha={alpha} must lie strictly between 0 and 1")
    v = (m + 1) * (1.0 - alpha)
    return math.ceil(v - _RANK_EPS * abs(v))


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated threshold with its defining rank and sample size.

    ``threshold`` is +inf when the rank exceeds the sample size (the set is
    the whole space) and ``empty`` flags a calibration on zero scores.
    """

    threshold: float
    rank: int
    m: int
    empty: bool = False


def conformal_quantile(scores: Sequence[float] | np.ndarray, alpha: float) -> CalibrationResult:
    """Threshold for a 1 - alpha split-conformal set from calibration scores.

    Scores must be real or +inf. Ties are resolved by position in the
    (stable) ascending sort. An empty score vector yields +inf with a
    warning flag set.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    if np.any(np.isnan(scores)) or np.any(np.isneginf(scores)):
        raise ConfigError("scores must be finite or +inf")
    m = scores.size
    r = conformal_rank(m, alpha)
    if m == 0:
        warnings.warn("calibrating on an empty score vector; returning +inf", stacklevel=2)
        return CalibrationResult(threshold=np.inf, rank=r, m=0, empty=True)
    if r > m:
        return CalibrationResult(threshold=np.inf, rank=r, m=m)
    ordered = np.sort(scores, kind="stable")
    return CalibrationResult(threshold=float(ordered[r - 1]), rank=r, m=m)


def efcp_slack(n_candidates: int, m2: int) -> float:
    """Coverage slack of efficiency-first selection over K candidates.

    The selected set's conditional coverage is guaranteed to be at least
    (1 + 1/m2)(1 - alpha) minus this slack, which shrinks like
    sqrt(log K / m2).
    """
    if n_candidates < 1:
        raise ConfigError("need at least one candidate")
    if m2 < 1:
        raise ConfigError("calibration size must be positive")
    return (math.sqrt(math.log(2 * n_candidates) / 2.0) + 1.0 / 3.0) / math.sqrt(m2)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of width-based selection over a candidate menu."""

    candidate_widths: np.ndarray
    candidate_thresholds: np.ndarray
    chosen_index: int
    efcp_set: PredictionSet
    vfcp_set: PredictionSet | None
    slack: float
    all_infinite: bool = False


def _calibrate_all(families: Sequence[NestedFamily], d2: Dataset, alpha: float):
    thresholds = np.empty(len(families))
    widths = np.empty(len(families))
    for k, fam in enumerate(families):
        cal = conformal_quantile(fam.scores(d2.x, d2.y), alpha)
        thresholds[k] = cal.threshold
        widths[k] = fam.width_at(cal.threshold, d2.x)
    return thresholds, widths


def efcp(families: Sequence[NestedFamily], d2: Dataset, alpha: float) -> SelectionResult:
    """Efficiency-first selection: calibrate every family on ``d2``, return
    the minimum-width set.

    The returned set's width equals ``min(candidate_widths)`` exactly; ties
    break to the lowest index. The families must have been trained without
    touching ``d2``. If every width is infinite the first candidate is
    returned with ``all_infinite`` set.
    """
    if len(families) == 0:
        raise ConfigError("empty candidate menu")
    thresholds, widths = _calibrate_all(families, d2, alpha)
    all_inf = bool(np.all(np.isinf(widths)))
    k_hat = 0 if all_inf else int(np.argmin(widths))
    chosen = PredictionSet(families[k_hat], float(thresholds[k_hat]), float(widths[k_hat]))
    return SelectionResult(
        candidate_widths=widths,
        candidate_thresholds=thresholds,
        chosen_index=k_hat,
        efcp_set=chosen,
        vfcp_set=None,
        slack=efcp_slack(len(families), d2.n),
        all_infinite=all_inf,
    )


def vfcp(families: Sequence[NestedFamily], d2: Dataset, d3: Dataset, alpha: float) -> SelectionResult:
    """Validity-first selection: select on ``d2``, recalibrate on ``d3``.

    The recalibrated set keeps the finite-sample 1 - alpha marginal coverage
    guarantee. Its width is measured with the ``d2`` covariates as the
    reference sample, so that width comparisons against the selection stage
    differ only through the threshold.
    """
    sel = efcp(families, d2, alpha)
    fam = families[sel.chosen_index]
    cal3 = conformal_quantile(fam.scores(d3.x, d3.y), alpha)
    width3 = fam.width_at(cal3.threshold, d2.x)
    return SelectionResult(
        candidate_widths=sel.candidate_widths,
        candidate_thresholds=sel.candidate_thresholds,
        chosen_index=sel.chosen_index,
        efcp_set=sel.efcp_set,
        vfcp_set=PredictionSet(fam, float(cal3.threshold), float(width3)),
        slack=sel.slack,
        all_infinite=sel.all_infinite,
    )


@dataclass(frozen=True)
class CoverageReport:
    """Fraction of test points inside a prediction set, plus its width."""

    coverage: float
    mean_width: float
    n_test: int


def evaluate_coverage(pred: PredictionSet, test: Dataset) -> CoverageReport:
    """Empirical coverage of a prediction set on held-out test data."""
    if test.n < 1:
        raise ConfigError("test dataset is empty")
    inside = pred.contains(test.x, test.y)
    return CoverageReport(coverage=float(np.mean(inside)), mean_width=pred.width, n_test=test.n)
