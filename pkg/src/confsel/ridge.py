"""Ridge-penalty-path conformal selection and its exact error bound.

The path solves (Sigma_hat + lambda I) beta = Gamma_hat over a penalty grid
(negative penalties allowed down to -kappa * lambda_min(Sigma_hat)), the
selector calibrates each beta's absolute-residual band on a second fold and
keeps the smallest, and ``check_ridge_error_bound`` verifies the
deterministic inequality tying the path's estimation error to the whitened
covariance and cross-moment errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conformal import conformal_quantile, conformal_rank
from .data import Dataset
from .errors import ConfigError, NumericError
from .families import PredictionSet, linear_theta_family

CONDITION_LIMIT = 1e12
DEFAULT_GRID = (0.0, 200.0, 100)  # 100 equispaced penalties on [0, 200]


def default_lambda_grid() -> np.ndarray:
    lo, hi, count = DEFAULT_GRID
    return np.linspace(lo, hi, count)


@dataclass(frozen=True)
class RidgePath:
    """Penalty grid with one coefficient vector per kept penalty.

    ``sigma_hat`` and ``gamma_hat`` are the training-fold second-moment
    matrix and cross-moment vector; each row of ``betas`` satisfies
    (sigma_hat + lambda I) beta = gamma_hat to near machine precision.
    Grid entries below -kappa * lambda_min or with condition number beyond
    1e12 are dropped and recorded.
    """

    lambdas: np.ndarray
    betas: np.ndarray
    sigma_hat: np.ndarray
    gamma_hat: np.ndarray
    lambda_min_sigma_hat: float
    kappa: float
    n_train: int
    dropped: tuple[float, ...] = ()
    failed: tuple[tuple[float, str], ...] = ()

    def beta(self, index: int) -> np.ndarray:
        return self.betas[index]

    def stationarity_residuals(self) -> np.ndarray:
        """Relative residual ||(Sigma_hat + lambda I) beta - gamma_hat|| / ||gamma_hat||."""
        denom = np.linalg.norm(self.gamma_hat)
        if denom == 0:
            denom = 1.0
        res = np.empty(len(self.lambdas))
        for i, lam in enumerate(self.lambdas):
            lhs = (self.sigma_hat + lam * np.eye(self.sigma_hat.shape[0])) @ self.betas[i]
            res[i] = np.linalg.norm(lhs - self.gamma_hat) / denom
        return res


def fit_ridge_path(d1: Dataset, lambdas, kappa: float = 0.5) -> RidgePath:
    """Solve the ridge path on the training fold.

    Uses one symmetric eigendecomposition of Sigma_hat, so each penalty is a
    diagonal solve. Penalties violating lambda >= -kappa * lambda_min or
    pushing the condition number beyond 1e12 are skipped with a diagnostic.
    """
    if kappa >= 1:
        raise ConfigError(f"kappa={kappa} must be < 1")
    lambdas = np.sort(np.asarray(lambdas, dtype=float).ravel())
    if lambdas.size == 0:
        raise ConfigError("empty penalty grid")
    n1 = d1.n
    sigma_hat = d1.x.T @ d1.x / n1
    gamma_hat = d1.x.T @ d1.y / n1
    evals, evecs = np.linalg.eigh(sigma_hat)
    lam_min = float(evals[0])
    # the admissibility bound uses the PSD-clamped minimum so that float fuzz
    # in a rank-deficient sigma_hat cannot reject lambda = 0
    bound = -kappa * max(lam_min, 0.0)

    kept, betas, dropped, failed = [], [], [], []
    g_rot = evecs.T @ gamma_hat
    for lam in lambdas:
        if lam < bound:
            dropped.append(float(lam))
            continue
        shifted = evals + lam
        if shifted[0] <= 0 or shifted[-1] / shifted[0] > CONDITION_LIMIT:
            failed.append((float(lam), f"condition number beyond {CONDITION_LIMIT:.0e}"))
            continue
        kept.append(float(lam))
        betas.append(evecs @ (g_rot / shifted))
    if not kept:
        raise ConfigError("no admissible penalty in the grid")
    return RidgePath(
        lambdas=np.asarray(kept),
        betas=np.asarray(betas),
        sigma_hat=sigma_hat,
        gamma_hat=gamma_hat,
        lambda_min_sigma_hat=lam_min,
        kappa=kappa,
        n_train=n1,
        dropped=tuple(dropped),
        failed=tuple(failed),
    )


@dataclass
class RidgeSelection:
    """Penalty chosen on the calibration fold and the per-penalty half-widths."""

    lambda_hat: float
    chosen_index: int
    t_alpha: float
    thresholds: np.ndarray
    t_alpha_star: float | None = None


def select_lambda(path: RidgePath, d2: Dataset, alpha: float) -> RidgeSelection:
    """Calibrate each path entry's band on ``d2`` and keep the narrowest.

    Ties break to the smallest penalty. The selected band's width is
    2 * min over the grid of the calibrated half-widths, exactly.
    """
    scores = np.abs(d2.y[:, None] - d2.x @ path.betas.T)  # (n2, L)
    m = d2.n
    r = conformal_rank(m, alpha)
    if r > m:
        thresholds = np.full(len(path.lambdas), np.inf)
    else:
        thresholds = np.sort(scores, axis=0, kind="stable")[r - 1]
    idx = int(np.argmin(thresholds))
    return RidgeSelection(
        lambda_hat=float(path.lambdas[idx]),
        chosen_index=idx,
        t_alpha=float(thresholds[idx]),
        thresholds=thresholds,
    )


def ef_ridge(selection: RidgeSelection, path: RidgePath) -> PredictionSet:
    """Prediction set of the selected penalty at its selection half-width."""
    beta = path.beta(selection.chosen_index)
    return PredictionSet(linear_theta_family(beta), selection.t_alpha, 2.0 * selection.t_alpha)


def vf_ridge(selection: RidgeSelection, path: RidgePath, d3: Dataset, alpha: float) -> PredictionSet:
    """Recalibrate the selected penalty's band on a third fold.

    The recalibrated band has the finite-sample 1 - alpha coverage
    guarantee; ``selection.t_alpha_star`` records the new half-width.
    """
    beta = path.beta(selection.chosen_index)
    cal = conformal_quantile(np.abs(d3.y - d3.x @ beta), alpha)
    selection.t_alpha_star = float(cal.threshold)
    return PredictionSet(linear_theta_family(beta), float(cal.threshold), 2.0 * float(cal.threshold))


def _inv_sqrt(sigma: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(sigma)
    if evals[0] <= 0:
        raise NumericError(f"matrix is not positive definite (eigenvalue {evals[0]:.3e})")
    return (evecs / np.sqrt(evals)) @ evecs.T


def whitened_covariance_error(sigma_hat: np.ndarray, sigma_true: np.ndarray) -> float:
    """Operator norm of Sigma^{-1/2} Sigma_hat Sigma^{-1/2} - I.

    Zero when the estimate equals the truth; equals 1 when the estimate is
    twice the truth.
    """
    isq = _inv_sqrt(np.asarray(sigma_true, dtype=float))
    m = isq @ np.asarray(sigma_hat, dtype=float) @ isq - np.eye(sigma_true.shape[0])
    m = (m + m.T) / 2.0
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))


@dataclass(frozen=True)
class PopulationOracle:
    """Known population second moments for a synthetic design.

    ``y_second_moment`` (E[Y^2]) optionally enables the moment-bound check
    on the whitened cross-moment vector.
    """

    sigma: np.ndarray
    gamma: np.ndarray
    y_second_moment: float | None = None

    def beta_star(self, lam: float) -> np.ndarray:
        return np.linalg.solve(self.sigma + lam * np.eye(self.sigma.shape[0]), self.gamma)


@dataclass(frozen=True)
class RidgeBoundReport:
    """Per-penalty outcome of the deterministic ridge error bound."""

    lambdas: np.ndarray
    errors: np.ndarray           # ||beta_hat - beta_star||_Sigma per penalty
    bound: float                 # common right-hand side (+inf when vacuous)
    covariance_error: float      # whitened covariance error of sigma_hat
    gamma_error: float           # ||Sigma^{-1/2}(gamma_hat - gamma)||
    vacuous: bool
    holds: np.ndarray            # per-penalty bound satisfied
    ky_bound_ok: bool | None     # ||Sigma^{-1/2} gamma|| <= sqrt(E[Y^2]), if supplied

    @property
    def all_hold(self) -> bool:
        return bool(np.all(self.holds)) and (self.ky_bound_ok is not False)


def check_ridge_error_bound(path: RidgePath, oracle: PopulationOracle, c: float,
                            slack: float = 1e-8) -> RidgeBoundReport:
    """Verify, per penalty, that the path's estimation error in the
    Sigma-norm stays below the closed-form bound

        (1 - c - E_cov)_+^{-1} * (E_gamma + E_cov * ||Sigma^{-1/2} gamma|| / (1 - c)),

    where E_cov is the whitened covariance error and E_gamma the whitened
    cross-moment error. Requires every path penalty to satisfy
    lambda >= -c * lambda_min(Sigma). When 1 - c - E_cov <= 0 the bound is
    vacuous (+inf) and reported as such. ``slack`` absorbs arithmetic
    round-off only.
    """
    if c > 1:
        raise ConfigError(f"c={c} must be <= 1")
    sigma = np.asarray(oracle.sigma, dtype=float)
    isq = _inv_sqrt(sigma)
    lam_min_true = float(np.linalg.eigvalsh(sigma)[0])
    if np.any(path.lambdas < -c * lam_min_true - 1e-12):
        raise ConfigError("path contains a penalty below -c * lambda_min(Sigma)")

    cov_err = whitened_covariance_error(path.sigma_hat, sigma)
    gamma_err = float(np.linalg.norm(isq @ (path.gamma_hat - oracle.gamma)))
    gamma_norm = float(np.linalg.norm(isq @ oracle.gamma))

    denom = 1.0 - c - cov_err
    vacuous = denom <= 0 or c >= 1
    if vacuous:
        bound = np.inf
    else:
        bound = (gamma_err + cov_err * gamma_norm / (1.0 - c)) / denom

    errors = np.empty(len(path.lambdas))
    for i, lam in enumerate(path.lambdas):
        diff = path.betas[i] - oracle.beta_star(lam)
        errors[i] = float(np.sqrt(diff @ sigma @ diff))
    holds = errors <= bound + slack * max(1.0, bound if np.isfinite(bound) else 1.0)

    ky_ok = None
    if oracle.y_second_moment is not None:
        ky_ok = bool(gamma_norm <= np.sqrt(oracle.y_second_moment) + slack)

    return RidgeBoundReport(
        lambdas=path.lambdas.copy(),
        errors=errors,
        bound=float(bound),
        covariance_error=cov_err,
        gamma_error=gamma_err,
        vacuous=vacuous,
        holds=holds,
        ky_bound_ok=ky_ok,
    )
