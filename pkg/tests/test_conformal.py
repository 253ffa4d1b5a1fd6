import math

import numpy as np
import pytest

from confsel import (
    ConfigError,
    Dataset,
    PredictionSet,
    conformal_quantile,
    conformal_rank,
    efcp,
    efcp_slack,
    evaluate_coverage,
    fixed_width_family,
    linear_theta_family,
    rng_stream,
    vfcp,
)


class TestConformalQuantile:
    def test_rank_ten_of_ten(self):
        cal = conformal_quantile(np.arange(1.0, 11.0), 0.1)
        assert cal.rank == 10 and cal.threshold == 10.0

    def test_rank_overflow_gives_infinity(self):
        cal = conformal_quantile(np.arange(1.0, 5.0), 0.1)
        assert cal.rank == 5 and np.isinf(cal.threshold)

    def test_degenerate_ties(self):
        cal = conformal_quantile(np.full(8, 3.25), 0.5)
        assert cal.threshold == 3.25

    def test_empty_scores_warn(self):
        with pytest.warns(UserWarning):
            cal = conformal_quantile([], 0.1)
        assert cal.empty and np.isinf(cal.threshold)

    def test_rejects_nan_and_neg_inf(self):
        with pytest.raises(ConfigError):
            conformal_quantile([1.0, np.nan], 0.1)
        with pytest.raises(ConfigError):
            conformal_quantile([1.0, -np.inf], 0.1)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ConfigError):
            conformal_quantile([1.0], 0.0)
        with pytest.raises(ConfigError):
            conformal_quantile([1.0], 1.0)

    def test_plus_inf_scores_allowed(self):
        cal = conformal_quantile([1.0, np.inf, 2.0], 0.5)
        assert cal.threshold == 2.0

    def test_rank_formula_matches_ceiling(self):
        rng = rng_stream(17)
        for _ in range(200):
            m = int(rng.integers(1, 400))
            alpha = float(rng.uniform(0.01, 0.99))
            assert conformal_rank(m, alpha) == math.ceil(round((m + 1) * (1 - alpha), 9))

    def test_exactly_rank_scores_below_threshold(self):
        rng = rng_stream(18)
        for _ in range(50):
            m = int(rng.integers(2, 200))
            scores = rng.standard_normal(m)  # distinct almost surely
            alpha = float(rng.uniform(0.05, 0.5))
            cal = conformal_quantile(scores, alpha)
            if np.isfinite(cal.threshold):
                assert int(np.sum(scores <= cal.threshold)) == cal.rank

    def test_monotone_in_alpha(self):
        rng = rng_stream(19)
        scores = rng.standard_normal(60)
        alphas = np.linspace(0.02, 0.98, 25)
        thresholds = [conformal_quantile(scores, a).threshold for a in alphas]
        assert all(b <= a + 1e-12 for a, b in zip(thresholds, thresholds[1:]))


class TestSlack:
    def test_spec_value_k2_m200(self):
        s = efcp_slack(2, 200)
        expected = (math.sqrt(math.log(4.0) / 2.0) + 1.0 / 3.0) / math.sqrt(200.0)
        assert s == pytest.approx(expected)
        assert s == pytest.approx(0.0824, abs=5e-4)
        assert (1 + 1 / 200) * 0.9 - s == pytest.approx(0.8221, abs=5e-4)

    def test_vanishes_with_large_calibration(self):
        assert efcp_slack(1, 10 ** 10) < 1e-4

    def test_large_menu_value(self):
        s = efcp_slack(1200, 232)
        expected = (math.sqrt(math.log(2400.0) / 2.0) + 1.0 / 3.0) / math.sqrt(232.0)
        assert s == pytest.approx(expected)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigError):
            efcp_slack(0, 10)
        with pytest.raises(ConfigError):
            efcp_slack(3, 0)


def _menu_and_data(seed=0, n=80, k=4):
    rng = rng_stream(seed)
    x = rng.standard_normal((n, 2))
    y = x @ np.array([1.0, -2.0]) + rng.standard_t(3, n)
    thetas = [np.array([1.0, -2.0]), np.zeros(2)] + [rng.standard_normal(2) for _ in range(k - 2)]
    return [linear_theta_family(t) for t in thetas], Dataset(x, y)


class TestEfcp:
    def test_argmin_width(self):
        rng = rng_stream(3)
        x = rng.standard_normal((50, 1))
        fams = [fixed_width_family(lambda xx, c=c: c * xx[:, 0]) for c in (5.0, 1.0, 3.0)]
        y = x[:, 0]  # family with c=1 fits perfectly
        sel = efcp(fams, Dataset(x, y), 0.1)
        assert sel.chosen_index == 1
        assert sel.efcp_set.width == np.min(sel.candidate_widths)

    def test_singleton_menu_is_plain_split_conformal(self):
        fams, d2 = _menu_and_data(seed=5, k=2)
        sel = efcp(fams[:1], d2, 0.1)
        direct = conformal_quantile(fams[0].scores(d2.x, d2.y), 0.1)
        assert sel.efcp_set.threshold == direct.threshold
        assert sel.efcp_set.width == 2.0 * direct.threshold

    def test_identical_families_tie_break_lowest_index(self):
        fams, d2 = _menu_and_data(seed=6, k=2)
        sel = efcp([fams[0], fams[0]], d2, 0.1)
        assert sel.chosen_index == 0
        assert sel.candidate_widths[0] == sel.candidate_widths[1]

    def test_exact_min_width_random_menus(self):
        for seed in range(15):
            fams, d2 = _menu_and_data(seed=seed, k=6)
            sel = efcp(fams, d2, 0.1)
            assert sel.efcp_set.width == np.min(sel.candidate_widths)
            assert sel.candidate_widths[sel.chosen_index] == np.min(sel.candidate_widths)

    def test_all_infinite_widths_flagged(self):
        fams, _ = _menu_and_data(seed=7, k=2)
        tiny = Dataset(np.zeros((2, 2)), np.zeros(2))  # rank 3 > 2 -> +inf thresholds
        sel = efcp(fams, tiny, 0.1)
        assert sel.all_infinite and sel.chosen_index == 0

    def test_empty_menu_rejected(self):
        _, d2 = _menu_and_data()
        with pytest.raises(ConfigError):
            efcp([], d2, 0.1)


class TestVfcp:
    def test_singleton_menu_recalibrates_on_third_fold(self):
        fams, d2 = _menu_and_data(seed=8, k=2)
        _, d3 = _menu_and_data(seed=9)
        res = vfcp(fams[:1], d2, d3, 0.1)
        direct = conformal_quantile(fams[0].scores(d3.x, d3.y), 0.1)
        assert res.vfcp_set.threshold == direct.threshold

    def test_small_third_fold_gives_whole_space(self):
        fams, d2 = _menu_and_data(seed=10)
        d3 = Dataset(np.zeros((1, 2)), np.zeros(1))  # rank 2 > 1
        res = vfcp(fams, d2, d3, 0.1)
        assert np.isinf(res.vfcp_set.threshold)
        cov = evaluate_coverage(res.vfcp_set, d2)
        assert cov.coverage == 1.0

    def test_recalibrated_threshold_close_in_distribution(self):
        # d2 and d3 scores share a distribution, so the selected and
        # recalibrated thresholds agree on average
        rng = rng_stream(11)
        t2, t3 = [], []
        for rep in range(300):
            x = rng.standard_normal((200, 2))
            y = x @ np.array([1.0, 1.0]) + rng.standard_normal(200)
            fams = [linear_theta_family(np.array([1.0, 1.0])),
                    linear_theta_family(np.array([0.8, 1.2]))]
            res = vfcp(fams, Dataset(x[:100], y[:100]), Dataset(x[100:], y[100:]), 0.1)
            t2.append(res.efcp_set.threshold)
            t3.append(res.vfcp_set.threshold)
        ratio = np.mean(t3) / np.mean(t2)
        assert 0.9 < ratio < 1.25


class TestEvaluateCoverage:
    def test_infinite_threshold_covers_everything(self):
        fam = fixed_width_family(lambda x: np.zeros(x.shape[0]))
        pred = PredictionSet(fam, np.inf, np.inf)
        rep = evaluate_coverage(pred, Dataset(np.zeros((5, 1)), np.arange(5.0)))
        assert rep.coverage == 1.0

    def test_negative_infinite_threshold_covers_nothing(self):
        fam = fixed_width_family(lambda x: np.zeros(x.shape[0]))
        pred = PredictionSet(fam, -np.inf, 0.0)
        rep = evaluate_coverage(pred, Dataset(np.zeros((5, 1)), np.arange(5.0)))
        assert rep.coverage == 0.0

    def test_hand_counted_dataset(self):
        fam = fixed_width_family(lambda x: np.zeros(x.shape[0]))
        pred = PredictionSet(fam, 2.0, 4.0)
        test = Dataset(np.zeros((4, 1)), np.array([0.5, -1.0, 1.5, 3.0]))
        rep = evaluate_coverage(pred, test)
        assert rep.coverage == 0.75 and rep.n_test == 4


class TestQuantileStability:
    def test_empirical_quantiles_track_lipschitz_parent(self):
        # parent Uniform(0,1): F^{-1}(q) = q is 1-Lipschitz, so empirical
        # quantiles differ from the truth by at most the ecdf sup-distance
        rng = rng_stream(23)
        for n in (200, 800):
            sample = np.sort(rng.uniform(size=n))
            grid = np.arange(1, n + 1) / n
            delta = float(np.max(np.abs(grid - sample)))  # sup |F_n - F| at jumps
            delta = max(delta, float(np.max(np.abs(grid - 1.0 / n - sample))))
            for q in np.linspace(0.3, 0.7, 9):
                emp = sample[math.ceil(n * q) - 1]
                assert abs(emp - q) <= delta + 1e-12
