"""Tests for the comparison statistics.

Arithmetic statistics (DIC, CPO) are checked against naive plain-Python
recomputations on random fixtures; the Kolmogorov series against frozen
scipy.special values and a grid cross-check; the KS statistic against
scipy.stats.kstest as an independent sup oracle; predictive probabilities
against fresh-sample Monte Carlo.
"""

import json
import math

import numpy as np
import pytest
from scipy import special, stats

from logskew import model_selection as ms
from logskew.distributions import LcfusnParams, sample
from logskew.errors import (
    DimensionError,
    DomainError,
    NonFinite,
    TooFewDraws,
)
from logskew.inference import DataMatrix
from logskew.model_selection import (
    ComparisonReport,
    LoglikMatrix,
    cpo,
    dic,
    kolmogorov_sf,
    ks_plugin,
    predictive_probability,
)
from logskew.numerics import INF_BOUND, RandomStream


def univariate_params(mu, sigma2, delta, m):
    return LcfusnParams(np.array([float(mu)]), np.array([[float(sigma2)]]),
                        float(delta) * np.ones((1, m)))


def cdf_values(points, params):
    from logskew.distributions import lcfusn_cdf
    return np.array([lcfusn_cdf(np.array([p]), params).value for p in points])


class TestLoglikMatrix:
    def test_shapes_and_properties(self):
        table = LoglikMatrix(np.zeros((4, 7)))
        assert table.T == 4 and table.L == 7

    def test_neg_inf_entries_allowed(self):
        table = LoglikMatrix(np.array([[-1.0, -np.inf], [-2.0, -3.0]]))
        assert table.values[0, 1] == -np.inf

    def test_nan_rejected(self):
        with pytest.raises(NonFinite):
            LoglikMatrix(np.array([[0.0, np.nan]]))

    def test_pos_inf_rejected(self):
        with pytest.raises(NonFinite):
            LoglikMatrix(np.array([[0.0, np.inf]]))

    def test_one_dimensional_rejected(self):
        with pytest.raises(DomainError):
            LoglikMatrix(np.array([1.0, 2.0]))

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            LoglikMatrix(np.zeros((0, 3)))


class TestDic:
    def test_two_draw_fixture(self):
        # per-draw deviances 10 and 14, deviance at the mean 11
        table = LoglikMatrix(np.array([[-5.0], [-7.0]]))
        value, p_d = dic(table, -5.5)
        assert value == 13.0 and p_d == 1.0

    def test_single_draw_needs_override(self):
        table = LoglikMatrix(np.array([[-5.0]]))
        with pytest.raises(TooFewDraws):
            dic(table, -5.5)
        value, p_d = dic(table, -5.5, allow_single_draw=True)
        assert value == 11.0 and p_d == 0.0

    def test_matches_naive_recomputation(self):
        rng = np.random.default_rng(42)
        values = -3.0 + rng.standard_normal((37, 11))
        at_mean = float(-2.9 + rng.standard_normal())
        value, p_d = dic(LoglikMatrix(values), at_mean)
        # plain-Python double loop, no shared intermediates
        devs = []
        for t in range(37):
            total = 0.0
            for i in range(11):
                total += values[t, i]
            devs.append(-2.0 * total)
        d_bar = sum(devs) / len(devs)
        d_hat = -2.0 * at_mean
        assert value == pytest.approx(2.0 * d_bar - d_hat, rel=1e-10)
        assert p_d == pytest.approx(d_bar - d_hat, rel=1e-10)

    def test_decomposition_identity(self):
        rng = np.random.default_rng(7)
        table = LoglikMatrix(-2.0 + 0.3 * rng.standard_normal((50, 6)))
        value, p_d = dic(table, -12.4)
        d_bar = float(np.mean(-2.0 * table.values.sum(axis=1)))
        assert value == d_bar + p_d
        assert value == 2.0 * d_bar - (-2.0 * -12.4)

    def test_nonfinite_at_mean_rejected(self):
        table = LoglikMatrix(np.zeros((3, 2)))
        with pytest.raises(NonFinite):
            dic(table, np.inf)

    def test_neg_inf_entry_makes_mean_deviance_nonfinite(self):
        table = LoglikMatrix(np.array([[-1.0, -np.inf], [-1.0, -1.0]]))
        with pytest.raises(NonFinite):
            dic(table, -1.0)


class TestCpo:
    def test_constant_draws_recover_density(self):
        table = LoglikMatrix(np.full((5, 3), -1.7))
        values, total, mean = cpo(table)
        assert values == pytest.approx(np.exp(-1.7) * np.ones(3), rel=1e-14)
        assert total == pytest.approx(3 * -1.7, rel=1e-14)
        assert mean == pytest.approx(-1.7, rel=1e-14)

    def test_harmonic_mean_of_one_and_three(self):
        # 2 / (1/1 + 1/3) = 1.5
        table = LoglikMatrix(np.log(np.array([[1.0], [3.0]])))
        values, _, _ = cpo(table)
        assert values[0] == pytest.approx(1.5, rel=1e-14)

    def test_matches_naive_linear_space(self):
        rng = np.random.default_rng(11)
        loglik = -1.0 + 0.5 * rng.standard_normal((100, 10))
        values, total, mean = cpo(LoglikMatrix(loglik))
        for i in range(10):
            inv = [1.0 / math.exp(loglik[t, i]) for t in range(100)]
            naive = 1.0 / (sum(inv) / 100.0)
            assert values[i] == pytest.approx(naive, rel=1e-10)
        assert total == pytest.approx(sum(math.log(v) for v in values),
                                      rel=1e-12)
        assert mean == pytest.approx(total / 10.0, rel=1e-14)

    def test_zero_density_observation_reported_as_zero(self):
        table = LoglikMatrix(np.array([[-1.0, -np.inf], [-1.0, -2.0]]))
        values, total, mean = cpo(table)
        assert values[0] > 0.0
        assert values[1] == 0.0
        assert total == -np.inf and mean == -np.inf

    def test_single_draw_rejected(self):
        with pytest.raises(TooFewDraws):
            cpo(LoglikMatrix(np.zeros((1, 4))))

    def test_log_space_survives_extreme_magnitudes(self):
        # naive linear space overflows at 1/exp(-800); the log-scale sums
        # stay exact even where the linear vector saturates
        table = LoglikMatrix(np.array([[-800.0, 800.0], [-802.0, 798.0]]))
        values, total, _ = cpo(table)
        expected0 = math.log(2.0) - (802.0 + math.log1p(math.exp(-2.0)))
        expected1 = math.log(2.0) + 798.0 - math.log1p(math.exp(-2.0))
        assert values[0] == pytest.approx(math.exp(expected0), rel=1e-12)
        assert values[1] == np.inf
        assert total == pytest.approx(expected0 + expected1, rel=1e-12)


class TestKolmogorovSf:
    # frozen scipy.special.kolmogorov outputs (independent cephes code path)
    FROZEN = [
        (0.5, 0.9639452436648751),
        (1.0, 0.26999967167735456),
        (1.5, 0.022217962616525127),
    ]

    @pytest.mark.parametrize("x, expected", FROZEN)
    def test_frozen_values(self, x, expected):
        assert kolmogorov_sf(x) == pytest.approx(expected, rel=1e-13)

    def test_grid_against_scipy(self):
        # 100 terms fully converge for x >= 0.3 (next term < exp(-1800))
        for x in np.linspace(0.3, 3.0, 28):
            assert kolmogorov_sf(float(x)) == pytest.approx(
                float(special.kolmogorov(x)), rel=1e-11, abs=1e-15)

    def test_median_abscissa(self):
        assert kolmogorov_sf(float(special.kolmogi(0.5))) == \
            pytest.approx(0.5, abs=1e-12)

    def test_edges(self):
        assert kolmogorov_sf(0.0) == 1.0
        assert kolmogorov_sf(-1.0) == 1.0
        assert kolmogorov_sf(50.0) == 0.0

    def test_monotone_decreasing(self):
        grid = [kolmogorov_sf(x) for x in np.linspace(0.35, 2.5, 40)]
        assert all(a >= b for a, b in zip(grid, grid[1:]))


def synthetic_chain(count, seed, mu=0.2, sigma2=0.5, delta=0.25):
    """Pooled draw matrix (mu_1, sigma_11, delta) jittered around a center."""
    rng = RandomStream(seed)
    mus = mu + 0.05 * rng.standard_normal(count)
    sig = sigma2 + 0.1 * np.abs(rng.standard_normal(count))
    del_ = delta + 0.04 * rng.standard_normal(count)
    return np.column_stack([mus, sig, del_])


class TestPredictiveProbability:
    def test_one_draw_log_normal_median(self):
        draws = np.array([[0.0, 1.0, 0.0]])
        p = predictive_probability(draws, 1.0, "above", 1, min_draws=1)
        assert p == pytest.approx(0.5, abs=1e-6)

    def test_sentinel_threshold_has_no_mass_above(self):
        draws = synthetic_chain(120, seed=5)
        assert predictive_probability(draws, INF_BOUND, "above", 2) == 0.0

    def test_above_below_complementary(self):
        draws = synthetic_chain(120, seed=9)
        above = predictive_probability(draws, 1.7, "above", 1)
        below = predictive_probability(draws, 1.7, "below", 1)
        assert above + below == pytest.approx(1.0, abs=1e-6)

    def test_matches_fresh_sample_monte_carlo(self):
        draws = synthetic_chain(150, seed=77)
        threshold, m = 2.0, 2
        rb = predictive_probability(draws, threshold, "above", m)
        rng = RandomStream(1234)
        hits, per_draw = 0, 2000
        for row in draws:
            y = sample(univariate_params(row[0], row[1], row[2], m),
                       per_draw, rng)
            hits += int(np.sum(y[:, 0] > threshold))
        mc = hits / (150 * per_draw)
        se = math.sqrt(mc * (1.0 - mc) / (150 * per_draw))
        assert abs(rb - mc) < 3.0 * se

    def test_accepts_anything_pooling(self):
        class Bundle:
            def pooled(self):
                return synthetic_chain(110, seed=3)

        p = predictive_probability(Bundle(), 1.5, "below", 1)
        assert 0.0 < p < 1.0

    def test_too_few_draws(self):
        with pytest.raises(TooFewDraws):
            predictive_probability(synthetic_chain(99, seed=1), 1.0,
                                   "above", 1)

    def test_bad_direction(self):
        with pytest.raises(DomainError):
            predictive_probability(synthetic_chain(120, seed=1), 1.0,
                                   "sideways", 1)

    def test_nonpositive_threshold(self):
        with pytest.raises(DomainError):
            predictive_probability(synthetic_chain(120, seed=1), 0.0,
                                   "above", 1)

    def test_unrecognized_width(self):
        with pytest.raises(DomainError):
            predictive_probability(np.zeros((120, 4)), 1.0, "above", 1)


class TestKsPlugin:
    def test_single_observation_step_sup(self):
        # F(1) = 0.5 under LN(0, 1): the empirical step 0 -> 1 deviates 0.5
        data = DataMatrix(np.array([[1.0]]))
        dn, pvalue = ks_plugin(data, np.array([0.0]), np.array([[1.0]]),
                               0.0, 1, min_observations=1)
        assert dn == 0.5
        assert pvalue == pytest.approx(kolmogorov_sf(0.5), rel=1e-14)

    def test_matches_scipy_sup_exactly(self):
        params = univariate_params(0.3, 0.49, 0.35, 2)
        y = sample(params, 60, RandomStream(21))
        data = DataMatrix(y)
        dn, _ = ks_plugin(data, params.mu, params.sigma, 0.35, 2)
        res = stats.kstest(y[:, 0], lambda q: cdf_values(q, params))
        assert dn == res.statistic

    def test_invariant_under_log_transform(self):
        params = univariate_params(0.1, 0.64, -0.3, 1)
        y = sample(params, 45, RandomStream(33))
        dn, _ = ks_plugin(DataMatrix(y), params.mu, params.sigma, -0.3, 1)
        res = stats.kstest(np.log(y[:, 0]),
                           lambda q: cdf_values(np.exp(q), params))
        assert dn == pytest.approx(res.statistic, abs=1e-12)

    def test_null_calibration(self):
        # data drawn from the plug-in law itself: sqrt(L) D has the
        # Kolmogorov distribution (median ~0.8276), p is near-uniform
        params = univariate_params(0.1, 0.8, 0.3, 1)
        scaled, pvals = [], []
        for rep in range(60):
            y = sample(params, 100, RandomStream(500 + rep))
            dn, pvalue = ks_plugin(DataMatrix(y), params.mu, params.sigma,
                                   0.3, 1)
            scaled.append(math.sqrt(100) * dn)
            pvals.append(pvalue)
        assert 0.68 < float(np.median(scaled)) < 0.98
        assert stats.kstest(pvals, "uniform").pvalue > 0.01

    def test_power_against_shifted_model(self):
        # location shift of 0.6 on the log scale: sup distance ~0.24
        truth = univariate_params(0.6, 1.0, 0.0, 1)
        rejected = 0
        for rep in range(25):
            y = sample(truth, 150, RandomStream(900 + rep))
            _, pvalue = ks_plugin(DataMatrix(y), np.array([0.0]),
                                  np.array([[1.0]]), 0.0, 1)
            rejected += pvalue < 0.01
        assert rejected == 25

    def test_multivariate_rejected(self):
        data = DataMatrix(np.ones((12, 2)))
        with pytest.raises(DimensionError):
            ks_plugin(data, np.zeros(2), np.eye(2), 0.0, 1)

    def test_too_few_observations(self):
        data = DataMatrix(np.ones((9, 1)))
        with pytest.raises(TooFewDraws):
            ks_plugin(data, np.array([0.0]), np.array([[1.0]]), 0.0, 1)


class TestComparisonReport:
    def make(self, **overrides):
        fields = dict(dic=120.5, p_d=3.2, slncpo_sum=-83.0, slncpo_mean=-0.83,
                      ks_dn=0.031, ks_pvalue=0.62,
                      predictive_probs=((2.42, "above", 0.11),))
        fields.update(overrides)
        return ComparisonReport(**fields)

    def test_round_trips_through_json(self):
        report = self.make()
        loaded = json.loads(json.dumps(report.to_dict()))
        assert loaded["dic"] == 120.5
        assert loaded["predictive_probs"][0] == {
            "threshold": 2.42, "direction": "above", "probability": 0.11}

    def test_mean_is_sum_over_observations(self):
        report = self.make()
        assert report.slncpo_mean == pytest.approx(report.slncpo_sum / 100.0)

    def test_nonfinite_p_d_rejected(self):
        with pytest.raises(NonFinite):
            self.make(p_d=np.inf)

    def test_ks_dn_outside_unit_interval_rejected(self):
        with pytest.raises(DomainError):
            self.make(ks_dn=1.2)

    def test_bad_probability_rejected(self):
        with pytest.raises(DomainError):
            self.make(predictive_probs=((1.0, "above", 1.5),))
