"""Tests for the log-skewed distribution families.

Expected constants are frozen outputs of an independent oracle script
(closed forms, scipy.special transcriptions, and mpmath quadrature).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from logskew import distributions as dist
from logskew.distributions import (
    LcfusnParams,
    MomentOrder,
    SkewnessMatrix,
    SunParams,
)
from logskew.errors import (
    BadPartition,
    DomainError,
    InvalidSkewness,
    NotBlockDiagonal,
    NotPositiveDefinite,
)
from logskew.numerics import RandomStream
from logskew.numerics import _bvn_cdf  # vectorized closed form, test-only

LOG_NORMAL_AT_ONE = -0.9189385332046727  # -log(sqrt(2 pi))


def standard(delta):
    return LcfusnParams.standard(np.atleast_2d(delta))


class TestValidate:
    def test_zero_matrix_valid(self):
        sk = dist.validate(np.zeros((2, 3)))
        assert sk.n == 2 and sk.m == 3

    def test_parsimonious_within_bound(self):
        # 0.4 * sqrt(5) = 0.894 < 1
        sk = dist.validate(0.4 * np.ones((1, 5)))
        assert sk.m == 5

    def test_parsimonious_outside_bound(self):
        # 0.5 * sqrt(5) = 1.118 >= 1
        with pytest.raises(InvalidSkewness) as exc:
            dist.validate(0.5 * np.ones((1, 5)))
        assert exc.value.norm == pytest.approx(0.5 * math.sqrt(5.0), rel=1e-12)

    def test_boundary_margin(self):
        dist.validate([[1.0 - 1e-9]])
        with pytest.raises(InvalidSkewness):
            dist.validate([[1.0 - 1e-11]])

    def test_idempotent_on_validated(self):
        sk = dist.validate([[0.3]])
        assert dist.validate(sk) is sk


class TestDeltaFromLambda:
    def test_zero_map(self):
        assert np.all(dist.delta_from_lambda(np.zeros((2, 2))).delta == 0.0)

    def test_scalar_formula(self):
        sk = dist.delta_from_lambda([[1.0]])
        assert sk.delta[0, 0] == pytest.approx(0.7071067811865475, abs=1e-12)

    @settings(max_examples=50, deadline=None, derandomize=True)
    @given(st.lists(st.floats(-50.0, 50.0), min_size=4, max_size=4))
    def test_image_always_valid(self, vals):
        lam = np.array(vals).reshape(2, 2)
        sk = dist.delta_from_lambda(lam)  # would raise if invalid
        assert np.linalg.norm(sk.delta, 2) <= 1.0


class TestLcfusnLogpdf:
    def test_lognormal_at_one(self):
        assert dist.lcfusn_logpdf([1.0], standard([[0.0]])) == pytest.approx(
            LOG_NORMAL_AT_ONE, abs=1e-12)

    def test_skewed_at_one_matches_lognormal(self):
        # the skewing cdf argument vanishes at y = 1, so the factor is exactly 1/2
        assert dist.lcfusn_logpdf([1.0], standard([[0.4]])) == pytest.approx(
            LOG_NORMAL_AT_ONE, abs=1e-12)

    def test_transcription_fixture(self):
        # n=1, m=2, delta=0.4, y=2: oracle value from a direct scalar transcription
        p = standard(0.4 * np.ones((1, 2)))
        assert dist.lcfusn_logpdf([2.0], p) == pytest.approx(
            -1.5004069527957861, abs=1e-12)

    def test_rejects_nonpositive(self):
        p = standard([[0.2]])
        for bad in ([0.0], [-1.0], [np.inf]):
            with pytest.raises(DomainError):
                dist.lcfusn_logpdf(bad, p)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            dist.lcfusn_logpdf([1.0, 2.0], standard([[0.2]]))

    def test_location_scale_shift(self):
        # scaling by exp(mu) shifts log-density by -sum(mu) exactly
        sk = SkewnessMatrix(np.array([[0.3], [0.1]]))
        p0 = LcfusnParams(np.zeros(2), np.eye(2), sk)
        mu = np.array([0.5, -0.3])
        p1 = LcfusnParams(mu, np.eye(2), sk)
        y = np.array([1.3, 0.7])
        lhs = dist.lcfusn_logpdf(y * np.exp(mu), p1)
        rhs = dist.lcfusn_logpdf(y, p0) - float(mu.sum())
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestCfusnLogpdf:
    def test_reduces_to_normal(self):
        p = LcfusnParams(np.zeros(2), np.eye(2), SkewnessMatrix(np.zeros((2, 2))))
        assert dist.cfusn_logpdf(np.zeros(2), p) == pytest.approx(
            -math.log(2.0 * math.pi), abs=1e-12)

    def test_jacobian_identity_exact(self):
        # same code path: difference must be exactly the Jacobian term
        p = LcfusnParams(np.array([0.1, -0.2]), np.diag([1.5, 0.8]),
                         SkewnessMatrix(np.array([[0.3, 0.1], [0.2, -0.4]])))
        y = np.array([math.e, math.e])
        diff = dist.cfusn_logpdf(np.log(y), p) - dist.lcfusn_logpdf(y, p)
        assert diff == 2.0  # sum(ln y) = n exactly

    def test_near_boundary_skewness(self):
        # delta = 0.99: oracle 2 phi(1) Phi(0.99/sqrt(1-0.9801))
        v = dist.cfusn_logpdf([1.0], standard([[0.99]]))
        assert v == pytest.approx(-0.7257913526458534, abs=1e-12)

    def test_near_boundary_normalizes(self):
        p = standard([[0.99]])
        total, _ = integrate.quad(lambda z: math.exp(dist.cfusn_logpdf([z], p)),
                                  -10.0, 10.0, epsabs=1e-10)
        assert total == pytest.approx(1.0, abs=1e-8)


class TestLcfusnCdf:
    def test_symmetric_median(self):
        r = dist.lcfusn_cdf([1.0], standard([[0.0]]))
        assert r.value == pytest.approx(0.5, abs=1e-12)

    def test_orthant_fixture(self):
        # 2 Phi_2((0,0) | rho=-0.4) = 1/2 + asin(-0.4)/pi
        r = dist.lcfusn_cdf([1.0], standard([[0.4]]))
        assert r.value == pytest.approx(0.36901011956554536, abs=1e-12)

    def test_total_mass_at_sentinel(self):
        from logskew.numerics import INF_BOUND
        p = standard(np.array([[0.3, -0.2]]))
        r = dist.lcfusn_cdf([INF_BOUND], p)
        assert r.value == pytest.approx(1.0, abs=1e-9)

    def test_monotone_in_argument(self):
        p = standard([[0.4]])
        vals = [dist.lcfusn_cdf([y], p).value for y in (0.5, 1.0, 2.0, 4.0)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_matches_sampler(self):
        p = standard([[0.4]])
        draws = dist.sample(p, 100_000, RandomStream(7))
        for y in (0.8, 1.5):
            emp = float(np.mean(draws[:, 0] <= y))
            theo = dist.lcfusn_cdf([y], p).value
            se = math.sqrt(theo * (1.0 - theo) / draws.shape[0])
            assert abs(emp - theo) < 4.0 * se

    def test_location_scale_diagonal_matches_standardized(self):
        # with diagonal Sigma the exact block form reduces to the standard
        # formula at the standardized argument
        sk = SkewnessMatrix(np.array([[0.3], [0.2]]))
        mu = np.array([0.4, -0.1])
        sig = np.diag([2.0, 0.5])
        p = LcfusnParams(mu, sig, sk)
        y = np.array([1.7, 0.9])
        z = np.exp(np.linalg.inv(dist.sqrt_psd(sig)) @ (np.log(y) - mu))
        a = dist.lcfusn_cdf(y, p)
        b = dist.lcfusn_cdf(z, LcfusnParams(np.zeros(2), np.eye(2), sk))
        assert a.value == pytest.approx(b.value, abs=5e-7)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            dist.lcfusn_cdf([0.0], standard([[0.2]]))


class TestMixedMoment:
    def test_lognormal_mean(self):
        assert dist.mixed_moment([1], standard([[0.0]])) == pytest.approx(
            math.exp(0.5), abs=1e-12)

    def test_skewed_first_two(self):
        p = standard([[0.4]])
        assert dist.mixed_moment([1], p) == pytest.approx(
            2.1612155333445298, rel=1e-12)
        assert dist.mixed_moment([2], p) == pytest.approx(
            11.647289347873238, rel=1e-12)

    def test_zero_order_is_one(self):
        p = standard(np.array([[0.3, -0.2]]))
        assert dist.mixed_moment([0], p) == pytest.approx(1.0, abs=1e-14)

    def test_location_scale_oracle(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.2]]))
        p = LcfusnParams(np.array([0.1, -0.2]),
                         np.array([[0.5, 0.2], [0.2, 0.8]]), sk)
        assert dist.mixed_moment([1, 1], p) == pytest.approx(
            2.850751525616027, rel=1e-12)

    def test_location_scale_monte_carlo(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.2]]))
        p = LcfusnParams(np.array([0.1, -0.2]),
                         np.array([[0.5, 0.2], [0.2, 0.8]]), sk)
        draws = dist.sample(p, 200_000, RandomStream(11))
        prod = draws[:, 0] * draws[:, 1]
        se = float(prod.std(ddof=1)) / math.sqrt(prod.shape[0])
        assert abs(float(prod.mean()) - dist.mixed_moment([1, 1], p)) < 4.0 * se

    def test_rejects_bad_order(self):
        p = standard([[0.2]])
        with pytest.raises(DomainError):
            dist.mixed_moment([-1], p)
        with pytest.raises(DomainError):
            dist.mixed_moment([1.5], p)
        with pytest.raises(DomainError):
            dist.mixed_moment([1, 2], p)


class TestShapeCoefficients:
    def test_lognormal_closed_forms(self):
        g, k = dist.shape_coefficients([[0.0]])
        e = math.e
        assert g == pytest.approx((2.0 + e) * math.sqrt(e - 1.0), abs=1e-9)
        assert k == pytest.approx(e**4 + 2 * e**3 + 3 * e**2 - 3.0, abs=1e-9)

    @pytest.mark.parametrize("m,delta,skew,kurt", [
        (1, 0.4, 5.64, 92.84), (2, 0.4, 5.16, 76.30), (3, 0.4, 4.73, 63.39),
        (4, 0.4, 4.36, 53.42), (5, 0.4, 4.05, 45.91),
        (1, -0.4, 5.20, 74.39), (2, -0.4, 4.33, 48.38), (3, -0.4, 3.55, 31.12),
        (4, -0.4, 2.84, 19.52), (5, -0.4, 2.14, 11.59),
    ])
    def test_parsimonious_grid(self, m, delta, skew, kurt):
        g, k = dist.shape_coefficients(
            SkewnessMatrix.parsimonious(delta, 1, m))
        assert g == pytest.approx(skew, abs=0.01)
        assert k == pytest.approx(kurt, abs=0.01)

    def test_monotone_decreasing_in_m(self):
        for delta in (0.4, -0.4):
            vals = [dist.shape_coefficients(SkewnessMatrix.parsimonious(delta, 1, m))
                    for m in range(1, 6)]
            skews = [v[0] for v in vals]
            kurts = [v[1] for v in vals]
            assert all(a > b for a, b in zip(skews, skews[1:]))
            assert all(a > b for a, b in zip(kurts, kurts[1:]))

    def test_requires_univariate(self):
        with pytest.raises(DomainError):
            dist.shape_coefficients(np.full((2, 1), 0.3))


class TestMarginal:
    def test_keep_all_identity(self):
        sk = SkewnessMatrix(np.array([[0.3, 0.1], [0.2, -0.4]]))
        p = LcfusnParams(np.array([0.1, 0.2]), np.diag([1.0, 2.0]), sk)
        q = dist.marginal(p, [0, 1])
        assert np.array_equal(q.mu, p.mu)
        assert np.array_equal(q.sigma, p.sigma)
        assert np.array_equal(q.delta.delta, sk.delta)

    def test_row_selection(self):
        sk = SkewnessMatrix(np.array([[0.3, 0.1], [0.2, -0.4]]))
        p = LcfusnParams.standard(sk)
        q = dist.marginal(p, [1])
        assert q.n == 1 and q.m == 2
        assert np.array_equal(q.delta.delta, sk.delta[1:2, :])

    def test_cross_covariance_rejected(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.2]]))
        p = LcfusnParams(np.zeros(2), np.array([[1.0, 0.3], [0.3, 1.0]]), sk)
        with pytest.raises(NotBlockDiagonal):
            dist.marginal(p, [0])

    def test_bad_index_sets(self):
        p = LcfusnParams.standard(SkewnessMatrix(np.array([[0.3], [0.2]])))
        for keep in ([], [2], [-1], [0, 0]):
            with pytest.raises(BadPartition):
                dist.marginal(p, keep)

    def test_joint_component_matches_marginal_law(self):
        # KS test of joint-sampler first component against the marginal cdf
        sk = SkewnessMatrix(np.array([[0.4], [0.2]]))
        joint = LcfusnParams.standard(sk)
        marg = dist.marginal(joint, [0])
        draws = dist.sample(joint, 100_000, RandomStream(23))[:, 0]
        d = marg.delta.delta[0, 0]

        def cdf(y):
            # closed-form bivariate orthant, vectorized over y
            ly = np.log(np.asarray(y, dtype=np.float64))
            return 2.0 * _bvn_cdf(ly, np.zeros_like(ly), -d)

        stat = stats.kstest(draws, cdf)
        assert stat.pvalue > 0.01


class TestConditional:
    def test_independent_block_equals_marginal(self):
        # second row of the skewness matrix is zero: y2 carries no information
        sk = SkewnessMatrix(np.array([[0.4], [0.0]]))
        p = LcfusnParams.standard(sk)
        marg = dist.marginal(p, [0])
        for y1 in (0.5, 1.0, 2.5):
            c = dist.conditional_logpdf([y1], [3.0], p, 1)
            assert c == pytest.approx(dist.lcfusn_logpdf([y1], marg), abs=1e-12)

    def test_ratio_identity_grid(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.3]]))
        p = LcfusnParams.standard(sk)
        marg = dist.marginal(p, [1])
        m2 = dist.lcfusn_logpdf([1.0], marg)
        for y1 in np.linspace(0.2, 5.0, 50):
            c = dist.conditional_logpdf([y1], [1.0], p, 1)
            j = dist.lcfusn_logpdf([y1, 1.0], p)
            assert c == pytest.approx(j - m2, abs=1e-6)

    def test_matches_unified_family_form(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.3]]))
        p = LcfusnParams.standard(sk)
        sun = dist.conditional_sun_params(p, [1.0], 1)
        for y1 in np.linspace(0.2, 5.0, 50):
            c = dist.conditional_logpdf([y1], [1.0], p, 1)
            u = dist.lsun_logpdf([y1], sun)
            assert c == pytest.approx(u, abs=1e-8)

    def test_location_scale_ratio_identity(self):
        sk = SkewnessMatrix(np.array([[0.3, 0.1], [-0.2, 0.2]]))
        p = LcfusnParams(np.array([0.2, -0.1]), np.diag([1.5, 0.7]), sk)
        marg = dist.marginal(p, [1])
        for y1, y2 in ((0.6, 1.2), (1.8, 0.5), (3.0, 2.0)):
            c = dist.conditional_logpdf([y1], [y2], p, 1)
            j = dist.lcfusn_logpdf([y1, y2], p)
            m = dist.lcfusn_logpdf([y2], marg)
            assert c == pytest.approx(j - m, abs=1e-6)

    def test_bad_partition(self):
        p = LcfusnParams.standard(SkewnessMatrix(np.array([[0.3], [0.3]])))
        for n1 in (0, 2):
            with pytest.raises(BadPartition):
                dist.conditional_logpdf([1.0], [1.0], p, n1)

    def test_integrates_to_one(self):
        sk = SkewnessMatrix(np.array([[0.3], [0.3]]))
        p = LcfusnParams.standard(sk)
        total, _ = integrate.quad(
            lambda y1: math.exp(dist.conditional_logpdf([y1], [2.0], p, 1)),
            1e-9, 200.0, epsabs=1e-10, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)


class TestIndependencePartition:
    def test_block_diagonal_case(self):
        d = np.array([[0.3, 0.0], [0.0, 0.4]])
        assert dist.independence_partition(d, 1, 1) == "independent-case-i"

    def test_anti_diagonal_case(self):
        d = np.array([[0.0, 0.3], [0.4, 0.0]])
        assert dist.independence_partition(d, 1, 1) == "independent-case-ii"

    def test_dense_not_established(self):
        d = np.array([[0.3, 0.3], [0.4, 0.0]])
        assert dist.independence_partition(d, 1, 1) == "not-established"

    def test_bad_splits(self):
        d = np.array([[0.3, 0.0], [0.0, 0.4]])
        for rs, cs in ((0, 1), (2, 1), (1, 0), (1, 2)):
            with pytest.raises(BadPartition):
                dist.independence_partition(d, rs, cs)


class TestLsunLogpdf:
    def test_embedding_matches_canonical(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            lam = rng.normal(size=(2, 2))
            sk = dist.delta_from_lambda(lam)
            sun = SunParams.embedding(sk)
            p = LcfusnParams.standard(sk)
            y = np.exp(rng.normal(size=2))
            assert dist.lsun_logpdf(y, sun) == pytest.approx(
                dist.lcfusn_logpdf(y, p), abs=1e-8)

    def test_zero_cross_block_is_lognormal(self):
        # numerator and denominator cdf factors cancel even for gamma != 0
        omega_star = np.block([[np.eye(1), np.zeros((1, 2))],
                               [np.zeros((2, 1)), np.eye(2)]])
        sun = SunParams(np.zeros(2), np.array([0.7]), np.ones(2), omega_star)
        for y in ([1.0, 1.0], [0.4, 2.2]):
            ly = np.log(y)
            expect = float(-ly.sum() - math.log(2 * math.pi) - 0.5 * ly @ ly)
            assert dist.lsun_logpdf(y, sun) == pytest.approx(expect, abs=1e-12)

    def test_transcription_grid(self):
        # n=1, m=1, gamma=0.5, cross=0.3: frozen oracle spot values plus a
        # scalar transcription across the grid
        omega_star = np.array([[1.0, 0.3], [0.3, 1.0]])
        sun = SunParams(np.zeros(1), np.array([0.5]), np.ones(1), omega_star)
        frozen = {0.25: -0.7498485780921188, 1.0: -0.9067952751741207,
                  3.5: -2.785034071327116}
        for y, expect in frozen.items():
            assert dist.lsun_logpdf([y], sun) == pytest.approx(expect, abs=1e-12)
        for y in np.linspace(0.2, 4.0, 20):
            ly = math.log(y)
            direct = (-ly - 0.5 * math.log(2 * math.pi) - 0.5 * ly * ly
                      + special.log_ndtr((0.5 + 0.3 * ly) / math.sqrt(0.91))
                      - special.log_ndtr(0.5))
            assert dist.lsun_logpdf([y], sun) == pytest.approx(direct, abs=1e-6)

    def test_invalid_omega_star(self):
        bad = np.array([[1.0, 1.2], [1.2, 1.0]])  # not positive definite
        with pytest.raises(NotPositiveDefinite):
            SunParams(np.zeros(1), np.zeros(1), np.ones(1), bad)

    def test_nonunit_correlation_diagonal_rejected(self):
        bad = np.array([[1.0, 0.0], [0.0, 2.0]])
        with pytest.raises(DomainError):
            SunParams(np.zeros(1), np.zeros(1), np.ones(1), bad)


class TestSample:
    def test_shape_and_positivity(self):
        p = standard(np.array([[0.3, -0.2]]))
        draws = dist.sample(p, 1000, RandomStream(3))
        assert draws.shape == (1000, 1)
        assert np.all(draws > 0.0)

    def test_deterministic_given_stream(self):
        p = standard([[0.4]])
        a = dist.sample(p, 100, RandomStream(9))
        b = dist.sample(p, 100, RandomStream(9))
        assert np.array_equal(a, b)

    def test_lognormal_reduction_ks(self):
        p = standard([[0.0]])
        draws = dist.sample(p, 100_000, RandomStream(13))[:, 0]
        stat = stats.kstest(np.log(draws), stats.norm.cdf)
        assert stat.pvalue > 0.01

    def test_mean_matches_moment(self):
        p = standard([[0.4]])
        draws = dist.sample(p, 200_000, RandomStream(17))[:, 0]
        se = float(draws.std(ddof=1)) / math.sqrt(draws.shape[0])
        assert abs(float(draws.mean()) - 2.1612155333445298) < 4.0 * se

    def test_empirical_cdf_matches_fixture(self):
        p = standard([[0.4]])
        draws = dist.sample(p, 200_000, RandomStream(19))[:, 0]
        emp = float(np.mean(draws <= 1.0))
        theo = 0.36901011956554536
        se = math.sqrt(theo * (1.0 - theo) / draws.shape[0])
        assert abs(emp - theo) < 4.0 * se

    def test_rejects_bad_count(self):
        with pytest.raises(DomainError):
            dist.sample(standard([[0.2]]), 0, RandomStream(1))


class TestNormalizationAndConsistency:
    @pytest.mark.parametrize("m", [1, 2])
    def test_density_normalizes(self, m):
        p = standard(0.35 * np.ones((1, m)))
        total, _ = integrate.quad(
            lambda t: math.exp(dist.lcfusn_logpdf([math.exp(t)], p) + t),
            -10.0, 10.0, epsabs=1e-9, limit=200)
        assert total == pytest.approx(1.0, abs=1e-4)

    def test_cdf_derivative_matches_density(self):
        p = standard([[0.4]])
        h = 1e-4
        for y in np.linspace(0.4, 3.0, 10):
            num = (dist.lcfusn_cdf([y + h], p).value
                   - dist.lcfusn_cdf([y - h], p).value) / (2.0 * h)
            assert num == pytest.approx(
                math.exp(dist.lcfusn_logpdf([y], p)), abs=1e-4)

    def test_lognormal_reduction_pointwise(self):
        p = standard([[0.0]])
        for y in (0.3, 1.0, 2.7):
            expect = stats.lognorm.logpdf(y, 1.0)
            assert dist.lcfusn_logpdf([y], p) == pytest.approx(expect, abs=1e-12)
            cdf = dist.lcfusn_cdf([y], p).value
            assert cdf == pytest.approx(stats.lognorm.cdf(y, 1.0), abs=1e-9)


class TestMomentOrderType:
    def test_valid_orders(self):
        mo = MomentOrder(np.array([0, 1, 3]))
        assert mo.n == 3

    def test_invalid_orders(self):
        for bad in ([-1], [0.5], [np.nan]):
            with pytest.raises(DomainError):
                MomentOrder(np.array(bad))
