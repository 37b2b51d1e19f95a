import numpy as np
import pytest

from oracles import hc1_oracle, iid_if_variance, sandwich_oracle, t_quantile_oracle, tsl_oracle
from svydid.design import SingletonStratumError, SurveyDesign
from svydid.regression import wls
from svydid.tsl import (
    LinearizedSample,
    VarianceError,
    VarianceResult,
    cluster_only_variance,
    hc1_variance,
    regression_sandwich,
    t_interval,
    t_quantile,
    tsl_variance,
)


def toy_design(rng, n=12, H=2, per=3, fpc=None):
    strata = np.repeat(np.arange(H), n // H)
    psu = strata * per + rng.integers(0, per, n)
    # make sure every PSU label appears
    psu[: H * per] = np.repeat(np.arange(H), per) * per + np.tile(np.arange(per), H)
    strata[: H * per] = np.repeat(np.arange(H), per)
    kw = {} if fpc is None else {"sampling_fraction": fpc}
    return SurveyDesign.from_arrays(weights=rng.uniform(0.5, 2, n), strata=strata, psu=psu, **kw), strata, psu


class TestTslVariance:
    def test_iid_degeneracy(self):
        psi = np.random.default_rng(0).normal(size=25)
        v = tsl_variance(LinearizedSample(psi, SurveyDesign.iid(25)))
        assert v.variance == pytest.approx(iid_if_variance(psi.tolist()), rel=1e-13)
        assert v.df == 24

    def test_census_is_zero(self):
        rng = np.random.default_rng(1)
        d, _, _ = toy_design(rng, fpc=1.0)
        v = tsl_variance(LinearizedSample(rng.normal(size=12), d))
        assert v.variance == 0.0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        d, strata, psu = toy_design(rng)
        psi = rng.normal(size=12)
        v = tsl_variance(LinearizedSample(psi, d))
        assert v.variance == pytest.approx(tsl_oracle(psi, strata, psu), rel=1e-12)
        assert v.df == 6 - 2

    def test_brute_force_oracle_with_fpc(self):
        rng = np.random.default_rng(3)
        strata = np.repeat([0, 1], 6)
        psu = np.repeat(np.arange(4), 3)
        d = SurveyDesign.from_arrays(strata=strata, psu=psu, population_psus={0: 5, 1: 8})
        psi = rng.normal(size=12)
        V = tsl_variance(LinearizedSample(psi, d)).variance
        assert V == pytest.approx(tsl_oracle(psi, strata, psu, {0: 2 / 5, 1: 2 / 8}), rel=1e-12)

    def test_matrix_version_matches_columns(self):
        rng = np.random.default_rng(4)
        d, strata, psu = toy_design(rng)
        psi = rng.normal(size=(12, 3))
        v = tsl_variance(LinearizedSample(psi, d))
        for a in range(3):
            assert v.vcov[a, a] == pytest.approx(tsl_oracle(psi[:, a], strata, psu), rel=1e-12)
        # off-diagonal via the polarization identity
        s = psi[:, 0] + psi[:, 1]
        off = 0.5 * (tsl_oracle(s, strata, psu) - v.vcov[0, 0] - v.vcov[1, 1])
        assert v.vcov[0, 1] == pytest.approx(off, rel=1e-10)
        assert np.all(np.linalg.eigvalsh(v.vcov) >= -1e-10)

    def test_singleton_stratum_named(self):
        d = SurveyDesign.from_arrays(strata=["a", "a", "b"], psu=[1, 2, 3])
        with pytest.raises(SingletonStratumError, match="'b'"):
            tsl_variance(LinearizedSample([1.0, 2.0, 3.0], d))

    def test_nonfinite_psi(self):
        with pytest.raises(VarianceError):
            tsl_variance(LinearizedSample([1.0, np.nan, 3.0], SurveyDesign.iid(3)))

    def test_fpc_monotone(self):
        rng = np.random.default_rng(5)
        strata = np.repeat([0, 1], 6)
        psu = np.repeat(np.arange(4), 3)
        psi = rng.normal(size=12)
        vals = [
            tsl_variance(LinearizedSample(psi, SurveyDesign.from_arrays(strata=strata, psu=psu, sampling_fraction=f))).variance
            for f in (0.0, 0.2, 0.5, 0.9)
        ]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_relabel_and_permute(self):
        rng = np.random.default_rng(6)
        d, strata, psu = toy_design(rng)
        psi = rng.normal(size=12)
        base = tsl_variance(LinearizedSample(psi, d)).variance
        perm = rng.permutation(12)
        d2 = SurveyDesign.from_arrays(strata=(strata * 7 + 3)[perm].astype(str), psu=(psu * 11)[perm])
        assert tsl_variance(LinearizedSample(psi[perm], d2)).variance == pytest.approx(base, rel=1e-12)


class TestClusterOnly:
    def test_equals_tsl_for_one_stratum(self):
        rng = np.random.default_rng(7)
        psu = rng.integers(0, 5, 40)
        d = SurveyDesign.cluster(psu, weights=rng.uniform(1, 2, 40))
        psi = rng.normal(size=40)
        a = cluster_only_variance(LinearizedSample(psi, d))
        b = tsl_variance(LinearizedSample(psi, d))
        assert a.variance == pytest.approx(b.variance, rel=1e-14)
        assert a.mode == "cluster" and a.df == 4

    def test_ignores_strata_and_fpc(self):
        rng = np.random.default_rng(8)
        strata = np.repeat([0, 1], 6)
        psu = np.repeat(np.arange(4), 3)
        d = SurveyDesign.from_arrays(strata=strata, psu=psu, sampling_fraction=0.5)
        psi = rng.normal(size=12)
        got = cluster_only_variance(LinearizedSample(psi, d)).variance
        assert got == pytest.approx(tsl_oracle(psi, np.zeros(12), psu), rel=1e-12)

    def test_two_psus_df_one(self):
        d = SurveyDesign.cluster([1, 1, 2, 2])
        assert cluster_only_variance(LinearizedSample([1.0, 2.0, 0.5, 0.1], d)).df == 1

    def test_single_psu(self):
        with pytest.raises(VarianceError):
            cluster_only_variance(LinearizedSample([1.0, 2.0], SurveyDesign.cluster([1, 1])))


class TestSandwich:
    def test_intercept_only_equals_tsl_of_mean(self):
        rng = np.random.default_rng(9)
        d, _, _ = toy_design(rng, n=30, per=4)
        y = rng.normal(size=30)
        w = d.weights / d.weights.mean()
        X = np.ones((30, 1))
        fit = wls(X, y, w)
        V = regression_sandwich(X, fit.residuals, w, d).variance
        ybar = np.dot(w, y) / w.sum()
        psi = w * (y - ybar) / w.sum()
        assert V == pytest.approx(tsl_variance(LinearizedSample(psi, d)).variance, rel=1e-12)

    def test_census_zero(self):
        rng = np.random.default_rng(10)
        d, _, _ = toy_design(rng, fpc=1.0)
        X = np.column_stack([np.ones(12), rng.normal(size=12)])
        fit = wls(X, rng.normal(size=12), d.weights)
        assert not np.any(regression_sandwich(X, fit.residuals, d.weights, d).vcov)

    def test_loop_oracle(self):
        rng = np.random.default_rng(11)
        strata = np.repeat([0, 1], 10)
        psu = np.repeat(np.arange(4), 5)
        d = SurveyDesign.from_arrays(strata=strata, psu=psu, weights=rng.uniform(0.5, 3, 20))
        X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
        y = X @ [1.0, 0.5, -2.0] + rng.normal(size=20)
        w = d.weights
        fit = wls(X, y, w)
        got = regression_sandwich(X, fit.residuals, w, d).vcov
        want = np.array(sandwich_oracle(X.tolist(), fit.residuals.tolist(), w.tolist(), strata, psu))
        np.testing.assert_allclose(got, want, rtol=1e-9)

    def test_singular_bread(self):
        X = np.column_stack([np.ones(6), np.ones(6)])
        with pytest.raises(VarianceError, match="singular"):
            regression_sandwich(X, np.zeros(6), np.ones(6), SurveyDesign.iid(6))


class TestHc1:
    def test_hand_oracle(self):
        X = np.array([[1, 0.5], [1, -1.0], [1, 2.0], [1, 0.0], [1, 1.5]])
        y = np.array([1.0, -0.5, 3.0, 0.2, 1.1])
        beta, V = hc1_oracle(X.tolist(), y.tolist())
        fit = wls(X, y)
        np.testing.assert_allclose(fit.coef, beta, rtol=1e-12)
        v = hc1_variance(X, fit.residuals)
        np.testing.assert_allclose(v.vcov, V, rtol=1e-10)
        assert v.df == 3

    def test_zero_df(self):
        with pytest.raises(VarianceError):
            hc1_variance(np.eye(3), np.ones(3))

    def test_homoskedastic_close_to_classical(self):
        rng = np.random.default_rng(12)
        n = 20000
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = X @ [0.3, 1.0] + rng.normal(size=n)
        fit = wls(X, y)
        hc1 = hc1_variance(X, fit.residuals).se
        s2 = fit.residuals @ fit.residuals / (n - 2)
        classical = np.sqrt(np.diag(s2 * np.linalg.inv(X.T @ X)))
        np.testing.assert_allclose(hc1, classical, rtol=0.05)


class TestTInterval:
    def test_design_row_of_the_ladder(self):
        # t_31 interval around 0.096 with SE 0.044
        lo, hi = t_interval(0.096, 0.044, 31)
        assert round(lo, 3) == 0.006
        # 0.18574 rounds to 0.186; the rounded inputs cannot pin the third
        # decimal of the upper limit, so it is checked to 1.5e-3
        assert hi == pytest.approx(0.187, abs=1.5e-3)

    def test_normal_limit(self):
        assert t_quantile(0.975, 1e6) == pytest.approx(1.959964, abs=1e-4)

    def test_cauchy(self):
        assert t_quantile(0.975, 1) == pytest.approx(12.706, abs=1e-3)

    @pytest.mark.parametrize("df", [1, 2, 3, 7, 31, 35, 120, 2500])
    @pytest.mark.parametrize("p", [0.6, 0.9, 0.975, 0.995])
    def test_against_mpmath(self, df, p):
        assert t_quantile(p, df) == pytest.approx(t_quantile_oracle(p, df), rel=1e-8, abs=1e-10)

    def test_symmetry(self):
        assert t_quantile(0.1, 4) == pytest.approx(-t_quantile(0.9, 4), rel=1e-14)

    @pytest.mark.parametrize("kw", [dict(df=0), dict(level=1.0), dict(level=0.0)])
    def test_invalid(self, kw):
        args = dict(est=0.0, se=1.0, df=10, level=0.95)
        args.update(kw)
        with pytest.raises(ValueError):
            t_interval(**args)

    def test_negative_se(self):
        with pytest.raises(ValueError):
            t_interval(0.0, -1.0, 5)


def test_variance_result_rejects_unknown_mode():
    with pytest.raises(ValueError):
        VarianceResult(np.eye(1), 3, "bootstrap")
