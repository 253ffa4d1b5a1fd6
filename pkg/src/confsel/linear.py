"""Best fixed-width linear predictor: minimize the calibrated half-width over
a bounded coefficient set.

The objective theta -> T_alpha(theta) is piecewise constant (it is an order
statistic of |y - X theta|), so minimization uses derivative-free multistart
direct search, with an exhaustive-grid oracle available in low dimension for
verification. All width claims are relative to the evaluated candidates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .conformal import conformal_quantile
from .data import Dataset, rng_stream
from .errors import ConfigError
from .families import NestedFamily, PredictionSet, linear_theta_family


@dataclass(frozen=True)
class ThetaDomain:
    """Bounded coefficient set: an axis-aligned box or the probability simplex."""

    kind: str  # "box" | "simplex"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    dim: int = 0

    @classmethod
    def box(cls, lower, upper) -> "ThetaDomain":
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise ConfigError("box bounds must have matching shapes")
        if np.any(lower > upper):
            raise ConfigError("empty box: lower bound exceeds upper bound")
        return cls(kind="box", lower=lower, upper=upper, dim=lower.size)

    @classmethod
    def simplex(cls, dim: int) -> "ThetaDomain":
        if dim < 1:
            raise ConfigError("simplex dimension must be at least 1")
        return cls(kind="simplex", dim=int(dim))

    @classmethod
    def default_box(cls, data: Dataset) -> "ThetaDomain":
        """Box of half-width 10 * (|OLS coefficient| + 1) per coordinate."""
        ols = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
        half = 10.0 * (np.abs(ols) + 1.0)
        return cls.box(-half, half)

    def project(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "box":
            return np.clip(theta, self.lower, self.upper)
        return project_simplex(theta)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {theta : theta_i >= 0, sum theta_i = 1}."""
    v = np.asarray(v, dtype=float).ravel()
    u = np.sort(v)[::-1]
    cumsum = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - cumsum) / np.arange(1, v.size + 1) > 0)[0][-1]
    tau = (cumsum[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def t_alpha_theta(theta, data: Dataset, alpha: float) -> float:
    """Calibrated half-width of the band around x -> theta^T x on ``data``."""
    theta = np.asarray(theta, dtype=float).ravel()
    return conformal_quantile(np.abs(data.y - data.x @ theta), alpha).threshold


@dataclass
class LinearSelection:
    """Best coefficient found, its half-width, and the full evaluation log."""

    theta_hat: np.ndarray
    t_alpha: float
    t_alpha_star: float | None = None
    search_trace: list = field(default_factory=list)  # (theta, T) pairs


class _Recorder:
    """Wraps the objective, projecting onto the domain and logging every call."""

    def __init__(self, domain: ThetaDomain, data: Dataset, alpha: float, budget: int):
        self.domain = domain
        self.data = data
        self.alpha = alpha
        self.budget = budget
        self.trace: list[tuple[np.ndarray, float]] = []

    @property
    def remaining(self) -> int:
        return self.budget - len(self.trace)

    def __call__(self, theta) -> float:
        theta = self.domain.project(np.asarray(theta, dtype=float).ravel())
        val = t_alpha_theta(theta, self.data, self.alpha)
        if self.remaining > 0:
            self.trace.append((theta, val))
        # hand the optimizer a large finite value so inf - inf never occurs
        return min(val, 1e300)

    def best(self) -> tuple[np.ndarray, float]:
        k = int(np.argmin([v for _, v in self.trace]))
        return self.trace[k]


def _box_starts(domain: ThetaDomain, data: Dataset, rng, n_random: int) -> list[np.ndarray]:
    ols = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
    starts = [domain.project(ols), domain.project(np.zeros(domain.dim))]
    span = domain.upper - domain.lower
    for _ in range(n_random):
        starts.append(domain.lower + rng.uniform(size=domain.dim) * span)
    return starts


def _simplex_starts(domain: ThetaDomain, data: Dataset, rng, n_random: int) -> list[np.ndarray]:
    dim = domain.dim
    starts = [np.full(dim, 1.0 / dim)]
    starts += [np.eye(dim)[i] for i in range(dim)]
    ols = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
    starts.append(project_simplex(ols))
    for _ in range(n_random):
        starts.append(rng.dirichlet(np.ones(dim)))
    return starts


def _pattern_search(obj: _Recorder, start: np.ndarray, step: float, min_step: float = 1e-4):
    """Compass search over pairwise coordinate-exchange directions, projected
    back onto the domain after each move."""
    dim = start.size
    dirs = [np.eye(dim)[i] - np.eye(dim)[j] for i in range(dim) for j in range(dim) if i != j]
    current = obj.domain.project(start)
    f_cur = obj(current)
    while step > min_step and obj.remaining > 0:
        improved = False
        for d in dirs:
            if obj.remaining <= 0:
                break
            cand = obj.domain.project(current + step * d)
            f_cand = obj(cand)
            if f_cand < f_cur:
                current, f_cur, improved = cand, f_cand, True
        if not improved:
            step *= 0.5


def select_theta(domain: ThetaDomain, data_i1: Dataset, alpha: float,
                 budget: int = 2000, seed: int = 0) -> LinearSelection:
    """Search the domain for the coefficient vector with the smallest
    calibrated half-width on ``data_i1``.

    Multistart direct search (Nelder-Mead for boxes, projected compass
    search for the simplex) seeded with the least-squares fit and zero; in
    dimension <= 2 a coarse grid pass seeds the search as well. Returns the
    best evaluated point, which by construction dominates every entry of the
    search trace.
    """
    if budget < 1:
        raise ConfigError("budget must be at least 1 evaluation")
    rng = rng_stream(seed, 0x7E7A)
    obj = _Recorder(domain, data_i1, alpha, budget)

    if domain.kind == "box":
        starts = _box_starts(domain, data_i1, rng, n_random=min(8, max(1, budget // 200)))
        if domain.dim <= 2 and budget > 50:
            per_axis = max(3, int((budget // 3) ** (1.0 / domain.dim)))
            per_axis = min(per_axis, 30)
            axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(domain.lower, domain.upper)]
            coarse = [np.array(p) for p in itertools.product(*axes)]
            vals = [obj(p) for p in coarse]
            starts.insert(0, coarse[int(np.argmin(vals))])
        for s in starts:
            if obj.remaining <= 2 * domain.dim:
                break
            maxfev = max(2 * domain.dim + 2, obj.remaining // max(1, len(starts)))
            minimize(obj, s, method="Nelder-Mead",
                     bounds=list(zip(domain.lower, domain.upper)),
                     options={"maxfev": maxfev, "xatol": 1e-6, "fatol": 1e-12})
    else:
        starts = _simplex_starts(domain, data_i1, rng, n_random=min(5, max(0, budget // 200)))
        for s in starts:
            if obj.remaining <= 0:
                break
            _pattern_search(obj, s, step=0.5)

    if not obj.trace:  # budget too small for any search: evaluate one admissible point
        theta0 = domain.project(np.zeros(data_i1.d))
        obj.trace.append((theta0, t_alpha_theta(theta0, data_i1, alpha)))
    theta, t = obj.best()
    return LinearSelection(theta_hat=theta, t_alpha=float(t), search_trace=obj.trace)


def grid_search_theta(domain: ThetaDomain, data: Dataset, alpha: float,
                      step: float = 1e-2) -> tuple[np.ndarray, float]:
    """Exhaustive-grid oracle for low-dimensional domains (box d <= 2,
    simplex d <= 3). Returns the grid minimizer and its objective value."""
    if domain.kind == "box":
        if domain.dim > 2:
            raise ConfigError("grid oracle supports box dimension <= 2")
        axes = [np.arange(lo, hi + step / 2, step) for lo, hi in zip(domain.lower, domain.upper)]
        points = itertools.product(*axes)
    else:
        if domain.dim > 3:
            raise ConfigError("grid oracle supports simplex dimension <= 3")
        m = max(1, round(1.0 / step))
        points = (np.array(c) / m for c in _compositions(m, domain.dim))
    best_theta, best_val = None, np.inf
    for p in points:
        theta = np.asarray(p, dtype=float)
        val = t_alpha_theta(theta, data, alpha)
        if val < best_val:
            best_theta, best_val = theta, val
    return best_theta, float(best_val)


def _compositions(total: int, parts: int):
    """All nonnegative integer tuples of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def ef_lin(selection: LinearSelection) -> PredictionSet:
    """Prediction set of the selected coefficient at its search half-width."""
    fam = linear_theta_family(selection.theta_hat)
    return PredictionSet(fam, selection.t_alpha, 2.0 * selection.t_alpha)


def vf_lin(selection: LinearSelection, data_i2: Dataset, alpha: float) -> PredictionSet:
    """Recalibrate the selected coefficient's half-width on a fresh fold.

    The recalibrated set carries the finite-sample 1 - alpha coverage
    guarantee; ``selection.t_alpha_star`` records the new half-width.
    """
    t_star = t_alpha_theta(selection.theta_hat, data_i2, alpha)
    selection.t_alpha_star = float(t_star)
    fam = linear_theta_family(selection.theta_hat)
    return PredictionSet(fam, float(t_star), 2.0 * float(t_star))


def aggregate_features(mus, data: Dataset) -> Dataset:
    """Replace covariates by the outputs of trained predictors.

    Each predictor maps an (n, d) covariate matrix to n predictions; the
    resulting dataset has one column per predictor and keeps the responses.
    The predictors must have been trained on data disjoint from ``data``.
    """
    cols = [np.asarray(mu(data.x), dtype=float).ravel() for mu in mus]
    return Dataset(np.column_stack(cols), data.y)
