import numpy as np
import pytest

from confsel import (
    ConfigError,
    Dataset,
    NumericError,
    PopulationOracle,
    SyntheticConfig,
    check_ridge_error_bound,
    conformal_quantile,
    default_lambda_grid,
    ef_ridge,
    evaluate_coverage,
    fit_ridge_path,
    gen_linear_t,
    rng_stream,
    select_lambda,
    vf_ridge,
    whitened_covariance_error,
)


def _random_data(seed, n=60, d=5, noise=1.0):
    rng = rng_stream(seed)
    x = rng.standard_normal((n, d))
    y = x @ rng.standard_normal(d) + noise * rng.standard_normal(n)
    return Dataset(x, y)


class TestFitRidgePath:
    def test_scalar_closed_form(self):
        path = fit_ridge_path(Dataset(np.array([[1.0]]), np.array([2.0])), [1.0])
        assert path.sigma_hat[0, 0] == 1.0 and path.gamma_hat[0] == 2.0
        assert path.betas[0, 0] == pytest.approx(1.0)  # 2 / (1 + 1)

    def test_huge_penalty_shrinks_to_zero(self):
        data = _random_data(1)
        path = fit_ridge_path(data, [1e6])
        assert np.linalg.norm(path.betas[0]) <= np.linalg.norm(path.gamma_hat) / 1e6 + 1e-15

    def test_zero_penalty_is_ols(self):
        data = _random_data(2)
        path = fit_ridge_path(data, [0.0])
        ols = np.linalg.lstsq(data.x, data.y, rcond=None)[0]
        assert np.linalg.norm(path.betas[0] - ols) < 1e-10

    def test_stationarity_on_default_grid(self):
        data = _random_data(3, n=80, d=8)
        path = fit_ridge_path(data, default_lambda_grid())
        assert path.stationarity_residuals().max() <= 1e-8

    def test_inadmissible_negative_penalties_dropped(self):
        data = _random_data(4)
        lam_min = float(np.linalg.eigvalsh(data.x.T @ data.x / data.n)[0])
        path = fit_ridge_path(data, [-2.0 * lam_min, 0.0, 1.0], kappa=0.5)
        assert path.dropped == (-2.0 * lam_min,)
        assert path.lambdas.tolist() == [0.0, 1.0]

    def test_admissible_negative_penalty_kept(self):
        data = _random_data(5)
        lam_min = float(np.linalg.eigvalsh(data.x.T @ data.x / data.n)[0])
        lam = -0.4 * lam_min
        path = fit_ridge_path(data, [lam, 0.0], kappa=0.5)
        assert path.lambdas[0] == lam
        assert path.stationarity_residuals().max() <= 1e-8

    def test_condition_guard_records_failure(self):
        x = np.diag([np.sqrt(2e13), np.sqrt(2.0)])  # sigma_hat = diag(1e13, 1)
        data = Dataset(x, np.array([1.0, 1.0]))
        path = fit_ridge_path(data, [0.0, 10.0])
        assert len(path.failed) == 1 and path.failed[0][0] == 0.0
        assert path.lambdas.tolist() == [10.0]

    def test_kappa_must_be_below_one(self):
        with pytest.raises(ConfigError):
            fit_ridge_path(_random_data(6), [0.0], kappa=1.0)

    def test_monotone_shrinkage(self):
        data = _random_data(7)
        path = fit_ridge_path(data, np.linspace(0.0, 50.0, 40))
        norms = np.linalg.norm(path.betas, axis=1)
        assert np.all(np.diff(norms) <= 1e-12)

    def test_path_continuity(self):
        data = _random_data(8, n=100, d=6)
        path = fit_ridge_path(data, default_lambda_grid())
        lam_min = path.lambda_min_sigma_hat
        for i in range(len(path.lambdas) - 1):
            dlam = path.lambdas[i + 1] - path.lambdas[i]
            step = np.linalg.norm(path.betas[i + 1] - path.betas[i])
            bound = 10.0 * dlam * np.linalg.norm(path.betas[i]) / (lam_min + path.lambdas[i])
            assert step <= bound


class TestSelectLambda:
    def test_noiseless_prefers_zero_penalty(self):
        rng = rng_stream(9)
        x = rng.standard_normal((40, 3))
        beta = np.array([1.0, -1.0, 2.0])
        d1 = Dataset(x[:20], x[:20] @ beta)
        d2 = Dataset(x[20:], x[20:] @ beta)
        path = fit_ridge_path(d1, [0.0, 1.0, 10.0])
        sel = select_lambda(path, d2, 0.1)
        assert sel.lambda_hat == 0.0 and sel.t_alpha < 1e-10

    def test_single_penalty_grid(self):
        data = _random_data(10)
        path = fit_ridge_path(data, [3.0])
        sel = select_lambda(path, _random_data(11), 0.1)
        assert sel.lambda_hat == 3.0

    def test_default_grid_selection_is_deterministic(self):
        cfg = SyntheticConfig(model="LinearT", d=10, nu=3, n_train=200, n_test=10, seed=21)
        train, _ = gen_linear_t(cfg)
        d1, d2 = Dataset(train.x[:100], train.y[:100]), Dataset(train.x[100:], train.y[100:])
        path = fit_ridge_path(d1, default_lambda_grid())
        sel_a = select_lambda(path, d2, 0.1)
        sel_b = select_lambda(fit_ridge_path(d1, default_lambda_grid()), d2, 0.1)
        assert np.isfinite(sel_a.lambda_hat)
        assert sel_a.lambda_hat == sel_b.lambda_hat and sel_a.t_alpha == sel_b.t_alpha

    def test_ef_width_is_twice_min_threshold(self):
        data = _random_data(12)
        path = fit_ridge_path(data, default_lambda_grid())
        sel = select_lambda(path, _random_data(13), 0.1)
        assert ef_ridge(sel, path).width == 2.0 * np.min(sel.thresholds)

    def test_matches_conformal_quantile(self):
        d1, d2 = _random_data(14), _random_data(15)
        path = fit_ridge_path(d1, [0.0, 5.0])
        sel = select_lambda(path, d2, 0.2)
        for i in range(2):
            direct = conformal_quantile(np.abs(d2.y - d2.x @ path.betas[i]), 0.2)
            assert sel.thresholds[i] == direct.threshold


class TestVfRidge:
    def test_rank_overflow_whole_space(self):
        path = fit_ridge_path(_random_data(16), [1.0])
        sel = select_lambda(path, _random_data(17), 0.1)
        tiny = Dataset(np.ones((2, 5)), np.ones(2))
        pred = vf_ridge(sel, path, tiny, 0.1)
        assert np.isinf(pred.threshold)
        assert evaluate_coverage(pred, _random_data(18)).coverage == 1.0

    def test_single_candidate_reduces_to_split_conformal(self):
        path = fit_ridge_path(_random_data(19), [2.0])
        sel = select_lambda(path, _random_data(20), 0.1)
        d3 = _random_data(21)
        pred = vf_ridge(sel, path, d3, 0.1)
        direct = conformal_quantile(np.abs(d3.y - d3.x @ path.betas[0]), 0.1)
        assert pred.threshold == direct.threshold
        assert sel.t_alpha_star == direct.threshold

    def test_recalibration_close_on_average(self):
        rng = rng_stream(22)
        t_sel, t_star = [], []
        for _ in range(200):
            x = rng.standard_normal((180, 4))
            y = x @ np.array([1.0, 0.5, -0.5, 2.0]) + rng.standard_normal(180)
            d1, d2, d3 = (Dataset(x[:60], y[:60]), Dataset(x[60:120], y[60:120]),
                          Dataset(x[120:], y[120:]))
            path = fit_ridge_path(d1, np.linspace(0.0, 20.0, 10))
            sel = select_lambda(path, d2, 0.1)
            pred = vf_ridge(sel, path, d3, 0.1)
            t_sel.append(sel.t_alpha)
            t_star.append(pred.threshold)
        ratio = np.mean(t_star) / np.mean(t_sel)
        assert 0.9 < ratio < 1.3


class TestWhitenedCovarianceError:
    def test_identity_case(self):
        s = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert whitened_covariance_error(s, s) == pytest.approx(0.0, abs=1e-12)

    def test_doubling_gives_one(self):
        s = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert whitened_covariance_error(2.0 * s, s) == pytest.approx(1.0, rel=1e-10)

    def test_gaussian_sampling_error_is_small(self):
        rng = rng_stream(23)
        x = rng.standard_normal((10_000, 5))
        assert whitened_covariance_error(x.T @ x / 10_000, np.eye(5)) < 0.2

    def test_non_pd_rejected(self):
        with pytest.raises(NumericError):
            whitened_covariance_error(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestRidgeErrorBound:
    def _exact_moment_instance(self):
        # design with sigma_hat == I exactly and gamma_hat == gamma exactly
        x = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]) * np.sqrt(2.0)
        b = np.array([0.5, -1.0])
        return Dataset(x, x @ b), PopulationOracle(sigma=np.eye(2), gamma=b,
                                                   y_second_moment=float(b @ b))

    def test_holds_with_equality_when_moments_exact(self):
        data, oracle = self._exact_moment_instance()
        path = fit_ridge_path(data, [0.0, 1.0, 10.0])
        report = check_ridge_error_bound(path, oracle, c=0.5)
        assert report.covariance_error == pytest.approx(0.0, abs=1e-12)
        assert report.gamma_error == pytest.approx(0.0, abs=1e-12)
        assert np.all(report.errors < 1e-10)
        assert report.all_hold and not report.vacuous
        assert report.ky_bound_ok

    def test_random_instance_with_known_moments(self):
        rng = rng_stream(24)
        d, n = 3, 50
        a = rng.standard_normal((d, d))
        sigma = a @ a.T + 0.5 * np.eye(d)
        beta = rng.standard_normal(d)
        x = rng.standard_normal((n, d)) @ np.linalg.cholesky(sigma).T
        y = x @ beta + rng.standard_normal(n)
        data = Dataset(x, y)
        oracle = PopulationOracle(sigma=sigma, gamma=sigma @ beta,
                                  y_second_moment=float(beta @ sigma @ beta + 1.0))
        path = fit_ridge_path(data, [0.0, 1.0, 5.0, 50.0])
        report = check_ridge_error_bound(path, oracle, c=0.5)
        assert report.all_hold

    def test_vacuous_bound_reported(self):
        rng = rng_stream(25)
        d, n = 6, 7  # so few rows that the covariance error exceeds 1 - c
        x = rng.standard_normal((n, d))
        data = Dataset(x, rng.standard_normal(n))
        oracle = PopulationOracle(sigma=np.eye(d), gamma=np.zeros(d))
        path = fit_ridge_path(data, [1.0])
        report = check_ridge_error_bound(path, oracle, c=0.9)
        assert report.vacuous and np.isinf(report.bound)
        assert report.all_hold  # vacuous-pass

    def test_penalty_below_population_bound_rejected(self):
        data, oracle = self._exact_moment_instance()
        path = fit_ridge_path(data, [-0.4], kappa=0.5)  # lambda_min(sigma) = 1
        with pytest.raises(ConfigError):
            check_ridge_error_bound(path, oracle, c=0.1)

    def test_c_above_one_rejected(self):
        data, oracle = self._exact_moment_instance()
        path = fit_ridge_path(data, [0.0])
        with pytest.raises(ConfigError):
            check_ridge_error_bound(path, oracle, c=1.5)

    def test_small_random_sweep(self):
        rng = rng_stream(26)
        for i in range(50):
            d = int(rng.integers(2, 5))
            n = int(rng.integers(8 * d, 80))
            a = rng.standard_normal((d, d))
            sigma = a @ a.T / d + 0.3 * np.eye(d)
            beta = rng.standard_normal(d)
            x = rng.standard_normal((n, d)) @ np.linalg.cholesky(sigma).T
            y = x @ beta + 0.7 * rng.standard_normal(n)
            oracle = PopulationOracle(sigma=sigma, gamma=sigma @ beta,
                                      y_second_moment=float(beta @ sigma @ beta + 0.49))
            path = fit_ridge_path(Dataset(x, y), [0.0, 0.5, 4.0, 40.0])
            assert check_ridge_error_bound(path, oracle, c=0.5).all_hold
