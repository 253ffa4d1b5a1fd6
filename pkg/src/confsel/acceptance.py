"""Named acceptance checks, shared by ``confsel check`` and the test suite.

Each check returns a CheckResult with a one-line detail string; statistical
checks use fixed seeds and three-standard-error tolerances so they are
stable under rerun.
"""

from __future__ import annotations

import functools
import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from .conformal import conformal_quantile, efcp, efcp_slack, evaluate_coverage
from .data import Dataset, rng_stream, sample_mvt
from .errors import ConfigError
from .estimators import kde_fit, linear_gaussian_interval, naive_interval
from .experiment import ExperimentConfig, emit_csv, run_experiment
from .families import density_level_family, fixed_width_family, linear_theta_family
from .linear import ThetaDomain, grid_search_theta, select_theta
from .ridge import (
    PopulationOracle,
    check_ridge_error_bound,
    default_lambda_grid,
    fit_ridge_path,
)


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.criterion:2d} {self.name}: {self.detail}"


def check_efcp_exact_oracle() -> CheckResult:
    """Selected width equals the minimum candidate width, bit-exactly."""
    rng = rng_stream(101)
    for _ in range(50):
        n, k = 40, int(rng.integers(1, 12))
        x = rng.standard_normal((n, 3))
        y = x @ rng.standard_normal(3) + rng.standard_t(3, n)
        d2 = Dataset(x, y)
        thetas = [rng.standard_normal(3) * rng.uniform(0.1, 3.0) for _ in range(k)]
        sel = efcp([linear_theta_family(t) for t in thetas], d2, 0.1)
        if sel.efcp_set.width != np.min(sel.candidate_widths):
            return CheckResult(1, "EFCP exact width oracle", False,
                               f"width {sel.efcp_set.width} != min {np.min(sel.candidate_widths)}")
    return CheckResult(1, "EFCP exact width oracle", True,
                       "selected width == min candidate width on 50 random menus (exact)")


def check_coverage_sandwich() -> CheckResult:
    """Single-family split conformal lands in [1-a, 1-a + 1/(m+1)]."""
    alpha, m, reps = 0.1, 99, 2000
    rng = rng_stream(202)
    fam = fixed_width_family(lambda x: np.zeros(x.shape[0]))
    hits = np.empty(reps)
    for i in range(reps):
        y_cal = rng.uniform(size=m)
        cal = conformal_quantile(fam.scores(np.zeros((m, 1)), y_cal), alpha)
        y_new = rng.uniform()
        hits[i] = fam.score_one(np.zeros(1), y_new) <= cal.threshold
    p_hat = float(hits.mean())
    lo, hi = 1.0 - alpha, 1.0 - alpha + 1.0 / (m + 1)
    se = math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / reps)
    ok = lo - 3 * se <= p_hat <= hi + 3 * se
    return CheckResult(2, "split-conformal coverage sandwich", ok,
                       f"coverage {p_hat:.4f} vs [{lo:.3f}, {hi:.3f}] +/- {3 * se:.4f}")


@functools.lru_cache(maxsize=1)
def _linear_t_ridge_study(reps: int = 200):
    cfg = ExperimentConfig(scenario="RidgeLinearT", alpha=0.1, n_train=200, n_test=100,
                           dims=(10,), nu=3.0, rho=0.5, reps=reps,
                           methods=("EFCP", "VFCP"), seed=20240)
    report = run_experiment(cfg)
    agg = {a.method: a for a in report.aggregates}
    return cfg, agg


def check_vfcp_validity() -> CheckResult:
    """VFCP mean coverage stays at or above the nominal level."""
    _, agg = _linear_t_ridge_study()
    a = agg["VFCP"]
    bound = 0.9 - 3.0 * a.se_coverage
    ok = a.mean_coverage >= bound
    return CheckResult(3, "VFCP validity", ok,
                       f"mean coverage {a.mean_coverage:.4f} >= {bound:.4f}")


def check_efcp_near_validity() -> CheckResult:
    """EFCP mean coverage respects the selection slack bound (floored at 0.85)."""
    cfg, agg = _linear_t_ridge_study()
    a = agg["EFCP"]
    m2 = 2 * (cfg.n_train // 3)  # EFCP calibrates on the merged second and third folds
    slack = efcp_slack(cfg.n_lambdas, m2)
    theory = (1.0 + 1.0 / m2) * (1.0 - cfg.alpha) - slack
    bound = max(0.85, theory) - 3.0 * a.se_coverage
    ok = a.mean_coverage >= bound
    return CheckResult(4, "EFCP near-validity", ok,
                       f"mean coverage {a.mean_coverage:.4f} >= {bound:.4f} "
                       f"(slack bound {theory:.4f})")


def check_width_improvement() -> CheckResult:
    """EFCP is at least as narrow as VFCP, with ratio in [0.6, 1.0] and
    no larger width standard error."""
    _, agg = _linear_t_ridge_study()
    ef, vf = agg["EFCP"], agg["VFCP"]
    ratio = ef.mean_width / vf.mean_width
    ok = (ef.mean_width <= vf.mean_width and 0.6 <= ratio <= 1.0
          and ef.se_width <= vf.se_width)
    return CheckResult(5, "EFCP width improvement", ok,
                       f"width ratio {ratio:.3f} in [0.6, 1.0]; "
                       f"SE {ef.se_width:.3f} <= {vf.se_width:.3f}")


def check_baseline_degeneracy() -> CheckResult:
    """With d >= n the baselines interpolate: zero width, zero coverage."""
    rng = rng_stream(606)
    for n, d in ((12, 12), (10, 14)):  # n >= 9 keeps the naive rank in-sample at alpha = 0.1
        x = np.eye(n, d)
        y = rng.standard_normal(n)
        data = Dataset(x, y)
        x_test = rng.standard_normal((20, d))
        y_test = rng.standard_normal(20)
        for build in (linear_gaussian_interval, naive_interval):
            interval = build(data, 0.1)
            if interval.mean_width(x_test) != 0.0:
                return CheckResult(6, "baseline degeneracy", False,
                                   f"{interval.kind} width {interval.mean_width(x_test)} != 0")
            if float(np.mean(interval.contains(x_test, y_test))) != 0.0:
                return CheckResult(6, "baseline degeneracy", False,
                                   f"{interval.kind} coverage != 0")
    return CheckResult(6, "baseline degeneracy", True,
                       "both baselines give exactly zero width and zero coverage at d >= n")


def check_ridge_bound_sweep(n_instances: int = 1000) -> CheckResult:
    """The deterministic ridge error bound never fails on random instances."""
    rng = rng_stream(707)
    violations = 0
    vacuous = 0
    for i in range(n_instances):
        d = int(rng.integers(2, 7))
        n = int(rng.integers(6 * d, 150))
        a = rng.standard_normal((d, d))
        sigma_scale = a @ a.T / d + 0.5 * np.eye(d)
        beta = rng.standard_normal(d)
        noise_sd = rng.uniform(0.2, 2.0)
        heavy = i % 3 == 0
        if heavy:
            nu = 5.0
            x = sample_mvt(n, d, nu, sigma_scale, rng)
            sigma = nu / (nu - 2.0) * sigma_scale
        else:
            x = rng.standard_normal((n, d)) @ np.linalg.cholesky(sigma_scale).T
            sigma = sigma_scale
        y = x @ beta + noise_sd * rng.standard_normal(n)
        data = Dataset(x, y)
        gamma = sigma @ beta
        oracle = PopulationOracle(sigma=sigma, gamma=gamma,
                                  y_second_moment=float(beta @ sigma @ beta + noise_sd ** 2))
        if i % 2 == 0:
            c, grid = 0.5, np.array([0.0, 0.5, 2.0, 10.0, 100.0])
        else:
            path0 = fit_ridge_path(data, [0.0], kappa=0.5)
            lam_neg = -0.2 * min(path0.lambda_min_sigma_hat,
                                 float(np.linalg.eigvalsh(sigma)[0]))
            c, grid = 0.3, np.array([min(lam_neg, 0.0), 0.0, 1.0, 25.0])
        path = fit_ridge_path(data, grid, kappa=0.5)
        report = check_ridge_error_bound(path, oracle, c)
        if not report.all_hold:
            violations += 1
        if report.vacuous:
            vacuous += 1
    ok = violations == 0
    return CheckResult(7, "deterministic ridge error bound", ok,
                       f"{violations} violations on {n_instances} instances "
                       f"({vacuous} vacuous)")


def check_ridge_stationarity_limits() -> CheckResult:
    """Path solves satisfy stationarity; huge penalties shrink to zero; zero
    penalty matches least squares."""
    rng = rng_stream(808)
    x = rng.standard_normal((60, 8))
    y = x @ rng.standard_normal(8) + rng.standard_normal(60)
    data = Dataset(x, y)
    grid = np.concatenate([default_lambda_grid(), [1e6]])
    path = fit_ridge_path(data, grid, kappa=0.5)
    resid = path.stationarity_residuals()
    if resid.max() > 1e-8:
        return CheckResult(8, "ridge stationarity and limits", False,
                           f"max relative stationarity residual {resid.max():.2e}")
    beta_big = path.betas[-1]
    big_ok = np.linalg.norm(beta_big) <= np.linalg.norm(path.gamma_hat) / 1e6 + 1e-12
    ols = np.linalg.lstsq(x, y, rcond=None)[0]
    ols_ok = np.linalg.norm(path.betas[0] - ols) <= 1e-8 * max(1.0, np.linalg.norm(ols))
    ok = bool(big_ok and ols_ok)
    return CheckResult(8, "ridge stationarity and limits", ok,
                       f"max residual {resid.max():.1e}; |beta(1e6)|={np.linalg.norm(beta_big):.2e}; "
                       f"lambda=0 vs OLS diff {np.linalg.norm(path.betas[0] - ols):.1e}")


@functools.lru_cache(maxsize=1)
def _cqr_study(reps: int = 100):
    cfg = ExperimentConfig(scenario="CqrPoisson", alpha=0.1, n_train=200, n_test=100,
                           dims=(3,), nu=3.0, rho=0.5, reps=reps,
                           methods=("EFCP", "VFCP"), seed=31337)
    report = run_experiment(cfg)
    menu = len(cfg.knn_k_grid) * cfg.n_betas * len(cfg.cqr_variants)
    agg = {a.method: a for a in report.aggregates}
    return menu, agg


def check_cqr_scenario() -> CheckResult:
    """CQR menu selection: VFCP keeps coverage, EFCP is at least as narrow."""
    menu, agg = _cqr_study()
    ef, vf = agg["EFCP"], agg["VFCP"]
    bound = 0.9 - 3.0 * vf.se_coverage
    ok = menu >= 30 and vf.mean_coverage >= bound and ef.mean_width <= vf.mean_width
    return CheckResult(9, "CQR menu scenario", ok,
                       f"menu {menu} candidates; VFCP coverage {vf.mean_coverage:.4f} >= {bound:.4f}; "
                       f"widths EFCP {ef.mean_width:.3f} <= VFCP {vf.mean_width:.3f}")


def check_density_width_oracle() -> CheckResult:
    """Level-set width of a Gaussian KDE matches the closed-form interval."""
    model = kde_fit(np.zeros((1, 1)), h=1.0)  # density is exactly standard normal
    fam = density_level_family(model.density, [(-5.0, 5.0)], grid_resolution=512)
    phi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
    width = fam.width_at(1.0 / phi1)
    err = abs(width - 2.0) / 2.0
    ok = err < 0.01
    return CheckResult(10, "density level-set width oracle", ok,
                       f"grid width {width:.5f} vs exact 2.0 (rel err {err:.4%})")


def check_linear_grid_equivalence(n_instances: int = 20) -> CheckResult:
    """Direct search matches the exhaustive grid optimum within one grid step."""
    rng = rng_stream(1111)
    worst = 0.0
    for i in range(n_instances):
        d = 1 if i < n_instances // 2 else 2
        n = 50
        x = rng.standard_normal((n, d))
        theta_true = rng.uniform(-2, 2, size=d)
        y = x @ theta_true + 0.5 * rng.standard_t(3, n)
        data = Dataset(x, y)
        domain = ThetaDomain.box(-3.0 * np.ones(d), 3.0 * np.ones(d))
        step = 0.01 if d == 1 else 0.05
        theta_g, t_grid = grid_search_theta(domain, data, 0.1, step=step)
        sel = select_theta(domain, data, 0.1, budget=4000, seed=97 + i)
        lipschitz = float(np.max(np.linalg.norm(x, axis=1)))
        tol = lipschitz * step * math.sqrt(d)
        gap = abs(sel.t_alpha - t_grid)
        worst = max(worst, gap / tol if tol > 0 else 0.0)
        if gap > tol:
            return CheckResult(11, "linear fixed-width grid equivalence", False,
                               f"instance {i}: |{sel.t_alpha:.4f} - {t_grid:.4f}| > tol {tol:.4f}")
    return CheckResult(11, "linear fixed-width grid equivalence", True,
                       f"{n_instances} instances within one grid step (worst {worst:.2f} of tol)")


def check_harness_determinism() -> CheckResult:
    """Same config and seed give byte-identical CSVs for 1 and 3 workers."""
    base = ExperimentConfig(scenario="RidgeLinearT", alpha=0.1, n_train=90, n_test=40,
                            dims=(5,), nu=3.0, rho=0.5, reps=6,
                            methods=("EFCP", "VFCP", "Linear", "Naive"),
                            seed=4242, n_lambdas=25)
    blobs = []
    for jobs in (1, 3):
        cfg = replace(base, jobs=jobs)
        report = run_experiment(cfg)
        with tempfile.NamedTemporaryFile(mode="w", suffix=".csv", delete=False) as fh:
            path = fh.name
        try:
            emit_csv(report, path)
            with open(path, "rb") as fh:
                blobs.append(fh.read())
        finally:
            os.unlink(path)
    ok = blobs[0] == blobs[1]
    return CheckResult(12, "harness determinism across workers", ok,
                       f"{len(blobs[0])} bytes, identical={ok}")


_ALL_CHECKS = (
    check_efcp_exact_oracle,
    check_coverage_sandwich,
    check_vfcp_validity,
    check_efcp_near_validity,
    check_width_improvement,
    check_baseline_degeneracy,
    check_ridge_bound_sweep,
    check_ridge_stationarity_limits,
    check_cqr_scenario,
    check_density_width_oracle,
    check_linear_grid_equivalence,
    check_harness_determinism,
)

SUITES = {
    "quick": (1, 6, 8, 10),
    "oracle": (1, 6, 10),
    "coverage": (2,),
    "scenario": (3, 4, 5),
    "ridge": (7, 8),
    "cqr": (9,),
    "linear": (11,),
    "determinism": (12,),
    "all": tuple(range(1, 13)),
}


def run_suite(name: str) -> list[CheckResult]:
    """Run the named acceptance suite, printing one line per criterion."""
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}, expected one of {sorted(SUITES)}")
    results = []
    for crit in SUITES[name]:
        res = _ALL_CHECKS[crit - 1]()
        print(res.line())
        results.append(res)
    return results
