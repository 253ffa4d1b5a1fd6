"""Trainable components consumed by the selectors, plus the two linear
baselines: Gaussian kernel density estimates, k-nearest-neighbor conditional
quantiles, and the normality-based / in-sample-residual prediction intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .conformal import conformal_quantile
from .data import Dataset
from .errors import ConfigError
from .families import QuantilePair

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class KdeModel:
    """Gaussian-kernel density estimate with a fixed bandwidth."""

    points: np.ndarray
    h: float

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        norm = (2.0 * np.pi) ** (self.d / 2.0) * self.h ** self.d
        out = np.empty(z.shape[0])
        block = max(1, 2 ** 22 // max(1, self.points.shape[0] * self.d))
        for start in range(0, z.shape[0], block):
            chunk = z[start:start + block]
            sq = np.sum((chunk[:, None, :] - self.points[None, :, :]) ** 2, axis=2)
            out[start:start + block] = np.exp(-0.5 * sq / self.h ** 2).mean(axis=1) / norm
        return out


def kde_fit(points, h: float) -> KdeModel:
    if h <= 0:
        raise ConfigError(f"bandwidth h={h} must be positive")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return KdeModel(points=points, h=float(h))


def kde_eval(model: KdeModel, z) -> np.ndarray:
    return model.density(z)


@dataclass(frozen=True)
class KnnQuantileModel:
    """Conditional quantiles from the responses of the k nearest neighbors.

    Neighbors are ranked by Euclidean covariate distance with ties broken by
    training index, so predictions are deterministic.
    """

    x: np.ndarray
    y: np.ndarray
    k: int


def knn_quantile_fit(data: Dataset, k: int) -> KnnQuantileModel:
    if not 1 <= k <= data.n:
        raise ConfigError(f"k={k} must lie in [1, {data.n}]")
    return KnnQuantileModel(x=data.x, y=data.y, k=int(k))


def predict_quantile(model: KnnQuantileModel, x, beta: float) -> np.ndarray:
    """Empirical beta-quantile of the k nearest responses at each query row.

    The quantile is the ascending order statistic at rank ceil(k * beta).
    """
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta={beta} must lie strictly between 0 and 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2 = np.sum((x[:, None, :] - model.x[None, :, :]) ** 2, axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, : model.k]
    neigh = np.sort(model.y[order], axis=1)
    # nudge before ceil() so float products like 10 * 0.1 stay at rank 1
    rank = int(np.ceil(model.k * beta - 1e-12))
    rank = min(max(rank, 1), model.k)
    return neigh[:, rank - 1]


def knn_quantile_pair(model: KnnQuantileModel, beta: float,
                      with_median: bool = True) -> QuantilePair:
    """Quantile pair at levels (beta, 1 - beta), optionally with the median."""
    return QuantilePair(
        q_lo=lambda x: predict_quantile(model, x, beta),
        q_hi=lambda x: predict_quantile(model, x, 1.0 - beta),
        q_med=(lambda x: predict_quantile(model, x, 0.5)) if with_median else None,
    )


def cqr_beta_grid(alpha: float, count: int) -> np.ndarray:
    """Equispaced quantile offsets from 1e-4 * alpha to 4 * alpha.

    Values are clamped to (0, 0.49] so the lower level stays below the upper
    one even for large alpha.
    """
    if count < 1:
        raise ConfigError("need at least one grid value")
    grid = np.linspace(1e-4 * alpha, 4 * alpha, count)
    return np.clip(grid, 1e-12, 0.49)


@dataclass(frozen=True)
class BaselineInterval:
    """Interval centered at a least-squares fit with a fixed or x-dependent
    half-width."""

    kind: str  # "linear_gaussian" | "naive"
    center: Callable[[np.ndarray], np.ndarray]
    half_width: Callable[[np.ndarray], np.ndarray]

    def contains(self, x, y) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.abs(y - self.center(x)) <= self.half_width(x)

    def mean_width(self, x) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return float(np.mean(2.0 * self.half_width(x)))


def _pinv_fit(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    gram = data.x.T @ data.x
    gram_pinv = np.linalg.pinv(gram, rcond=PINV_RCOND, hermitian=True)
    beta = gram_pinv @ (data.x.T @ data.y)
    return beta, gram_pinv


def linear_gaussian_interval(data: Dataset, alpha: float) -> BaselineInterval:
    """Normality-based interval around the pseudo-inverse least-squares fit.

    Half-width sigma_hat * z_{alpha/2} * sqrt(1 + x^T (X^T X)^+ x) with
    sigma_hat^2 the mean squared in-sample residual. Valid only under a
    homoscedastic Gaussian linear model; with d >= n the residuals vanish
    and the interval degenerates to zero width.
    """
    beta, gram_pinv = _pinv_fit(data)
    resid = data.y - data.x @ beta
    sigma_hat = float(np.sqrt(np.mean(resid ** 2)))
    z = float(norm.ppf(1.0 - alpha / 2.0))

    def half_width(x):
        g = np.einsum("ij,jk,ik->i", x, gram_pinv, x)
        return sigma_hat * z * np.sqrt(1.0 + np.maximum(g, 0.0))

    return BaselineInterval(kind="linear_gaussian",
                            center=lambda x: x @ beta,
                            half_width=half_width)


def naive_interval(data: Dataset, alpha: float) -> BaselineInterval:
    """Fixed-width interval calibrated on in-sample residuals.

    Uses the same order-statistic rank as split conformal but on the
    training residuals themselves, so it has no finite-sample guarantee.
    """
    beta, _ = _pinv_fit(data)
    resid = np.abs(data.y - data.x @ beta)
    t = conformal_quantile(resid, alpha).threshold

    def half_width(x):
        return np.full(x.shape[0], t)

    return BaselineInterval(kind="naive", center=lambda x: x @ beta, half_width=half_width)
