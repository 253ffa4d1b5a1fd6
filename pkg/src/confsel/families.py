"""Threshold-indexed nested prediction-set families.

A family assigns each point z = (x, y) a score t(z); the prediction set at
threshold T is {z : t(z) <= T}, which grows with T. Each family also knows
how to measure the width of its set at a given threshold, relative to a
reference sample of covariates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, WidthUnsupportedError

logger = logging.getLogger(__name__)

CQR_VARIANTS = ("V1", "V2", "V3")


def _as_xy(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(y) != x.shape[0]:
        raise ConfigError(f"{x.shape[0]} covariate rows but {len(y)} responses")
    return x, y


@dataclass(frozen=True)
class NestedFamily:
    """Score function plus width functional for one nested-set family.

    ``score_fn`` maps (x matrix, y vector) to a score vector; membership at
    threshold T is score <= T. ``width_fn`` maps (T, reference covariates)
    to the set's width. Both are pure, so instances are safe to share.
    """

    label: str
    score_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    width_fn: Callable[[float, np.ndarray | None], float]

    def scores(self, x, y) -> np.ndarray:
        x, y = _as_xy(x, y)
        return np.asarray(self.score_fn(x, y), dtype=float)

    def score_one(self, x, y) -> float:
        return float(self.scores(x, [y])[0])

    def width_at(self, threshold: float, reference_x=None) -> float:
        return float(self.width_fn(float(threshold), reference_x))

    def contains(self, x, y, threshold: float) -> np.ndarray:
        return self.scores(x, y) <= threshold


@dataclass(frozen=True)
class PredictionSet:
    """A family frozen at a calibrated threshold, with its measured width."""

    family: NestedFamily
    threshold: float
    width: float

    def contains(self, x, y) -> np.ndarray:
        return self.family.contains(x, y, self.threshold)


def fixed_width_family(predictor: Callable[[np.ndarray], np.ndarray],
                       label: str = "fixed-width") -> NestedFamily:
    """Band of half-width t around a point predictor: score |y - m(x)|, width 2T."""

    def score_fn(x, y):
        return np.abs(y - np.asarray(predictor(x), dtype=float).ravel())

    def width_fn(t, _reference):
        return 2.0 * t

    return NestedFamily(label=label, score_fn=score_fn, width_fn=width_fn)


def linear_theta_family(theta) -> NestedFamily:
    """Fixed-width band around the linear predictor x -> theta^T x.

    Needs no training data: the family is fully specified by ``theta``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    return fixed_width_family(lambda x: x @ theta, label=f"linear(d={theta.size})")


@dataclass(frozen=True)
class QuantilePair:
    """Conditional-quantile estimates at levels beta and 1 - beta.

    ``q_med`` (level 1/2) is only needed by the V2 variant.
    """

    q_lo: Callable[[np.ndarray], np.ndarray]
    q_hi: Callable[[np.ndarray], np.ndarray]
    q_med: Callable[[np.ndarray], np.ndarray] | None = None


def cqr_family(variant: str, q: QuantilePair, reference_x=None,
               label: str | None = None) -> NestedFamily:
    """Conformalized quantile regression family.

    V1 inflates the band [q_lo, q_hi] additively by t; V2 and V3 inflate it
    multiplicatively, scaled by the distance to the median (V2) or by the
    band length itself (V3). Width is the average Lebesgue measure of the
    x-cross-section over the reference covariates; for V1 that equals
    2T + mean(q_hi - q_lo).

    Points where a V2/V3 denominator degenerates to zero get score +inf
    (logged), which keeps selection loops total.
    """
    if variant not in CQR_VARIANTS:
        raise ConfigError(f"unknown CQR variant {variant!r}, expected one of {CQR_VARIANTS}")
    if variant == "V2" and q.q_med is None:
        raise ConfigError("variant V2 needs q_med")
    reference = None if reference_x is None else np.atleast_2d(np.asarray(reference_x, dtype=float))

    def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.full(num.shape, np.inf)
        ok = den > 0
        out[ok] = num[ok] / den[ok]
        n_bad = int((~ok).sum())
        if n_bad:
            logger.debug("degenerate quantile gap at %d point(s); scoring them +inf", n_bad)
        return out

    def score_fn(x, y):
        lo, hi = q.q_lo(x), q.q_hi(x)
        if variant == "V1":
            return np.maximum(lo - y, y - hi)
        if variant == "V2":
            med = q.q_med(x)
            return np.maximum(_ratio(lo - y, med - lo), _ratio(y - hi, hi - med))
        gap = hi - lo
        return np.maximum(_ratio(lo - y, gap), _ratio(y - hi, gap))

    def width_fn(t, ref):
        ref = reference if ref is None else np.atleast_2d(np.asarray(ref, dtype=float))
        if ref is None:
            raise ConfigError("CQR width needs reference covariates")
        gap = q.q_hi(ref) - q.q_lo(ref)
        if variant == "V1":
            return 2.0 * t + float(np.mean(gap))
        if np.isinf(t):
            return float(t) if t > 0 else 0.0
        scale = 1.0 + t if variant == "V2" else 1.0 + 2.0 * t
        return float(np.mean(np.maximum(0.0, scale * gap)))

    return NestedFamily(label=label or f"cqr-{variant}", score_fn=score_fn, width_fn=width_fn)


def density_level_family(density: Callable[[np.ndarray], np.ndarray],
                         support_box: Sequence[tuple[float, float]],
                         grid_resolution: int = 512,
                         label: str = "density-level") -> NestedFamily:
    """Upper level sets of a density: score 1/p(z), width = Lebesgue measure.

    The width of {z : p(z) >= 1/T} is estimated by midpoint-rule summation
    over a grid on ``support_box`` (precomputed here, so evaluation stays
    pure). Width is available for dimension <= 2 only; scores work in any
    dimension.
    """
    box = [(float(lo), float(hi)) for lo, hi in support_box]
    if any(hi <= lo for lo, hi in box):
        raise ConfigError(f"support box has empty axis: {box}")
    if grid_resolution < 2:
        raise ConfigError("grid_resolution must be at least 2")
    dim = len(box)

    grid_density = None
    cell_volume = None
    if dim <= 2:
        axes = [lo + (np.arange(grid_resolution) + 0.5) * (hi - lo) / grid_resolution
                for lo, hi in box]
        if dim == 1:
            mids = axes[0][:, None]
        else:
            g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
            mids = np.column_stack([g0.ravel(), g1.ravel()])
        grid_density = np.asarray(density(mids), dtype=float).ravel()
        if np.any(grid_density < 0):
            raise ConfigError("density is negative on the support box")
        cell_volume = float(np.prod([(hi - lo) / grid_resolution for lo, hi in box]))

    def score_fn(x, y):
        del y  # level-set membership is about the point itself
        p = np.asarray(density(x), dtype=float).ravel()
        out = np.full(p.shape, np.inf)
        np.divide(1.0, p, out=out, where=p > 0)
        return out

    def width_fn(t, _reference):
        if grid_density is None:
            raise WidthUnsupportedError(
                f"level-set width by grid integration supports dimension <= 2, got {dim}")
        if t <= 0:
            return 0.0
        if np.isinf(t):
            return cell_volume * grid_density.size
        return cell_volume * int(np.count_nonzero(grid_density >= 1.0 / t))

    return NestedFamily(label=label, score_fn=score_fn, width_fn=width_fn)
