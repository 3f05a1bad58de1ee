import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from icagan_bsd.exceptions import DataError
from icagan_bsd.preprocess import (
    EcdfModel,
    EmpiricalCdfTransformer,
    LinearPredictionWhitener,
    Whitener,
    apply_ecdf,
    fit_ecdf,
    fit_whitener,
    whiten,
)


def ar1(n, phi, seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    z = np.empty(n)
    z[0] = e[0]
    for t in range(1, n):
        z[t] = phi * z[t - 1] + e[t]
    return z


def lag1_autocorr(x):
    x = x - x.mean()
    return float(np.dot(x[1:], x[:-1]) / np.dot(x, x))


class TestWhitener:
    def test_ar1_coefficient(self):
        w = fit_whitener(ar1(10_000, 0.9, 0), p=4)
        assert 0.87 <= w.coeffs[0] <= 0.93

    def test_white_noise(self):
        w = fit_whitener(np.random.default_rng(1).normal(size=10_000), p=4)
        assert np.all(np.abs(w.coeffs) < 0.05)

    def test_ramp_perfectly_predictable(self):
        z = np.arange(2000, dtype=float)
        r = whiten(fit_whitener(z, p=1), z)
        assert np.var(r) < 1e-12

    def test_constant_series(self):
        w = fit_whitener(np.full(100, 3.5), p=2)
        assert np.all(w.coeffs == 0) and w.intercept == 3.5

    def test_too_short(self):
        with pytest.raises(DataError):
            fit_whitener(np.ones(40), p=4)

    def test_identity_whitener(self):
        z = np.random.default_rng(2).normal(size=50)
        r = whiten(Whitener(3, np.zeros(3), 0.0), z)
        assert np.array_equal(r, z[3:])

    def test_output_length(self):
        z = np.random.default_rng(3).normal(size=200)
        assert whiten(fit_whitener(z, 4), z).size == 196

    def test_series_of_length_p_rejected(self):
        with pytest.raises(DataError):
            whiten(Whitener(4, np.zeros(4), 0.0), np.ones(4))

    def test_residuals_decorrelated(self):
        z = ar1(20_000, 0.9, 4)
        r = whiten(fit_whitener(z, 4), z)
        assert abs(lag1_autocorr(r)) < 0.05

    def test_residual_mean_near_zero(self):
        z = ar1(20_000, 0.7, 5) + 10.0
        r = whiten(fit_whitener(z, 4), z)
        assert abs(r.mean()) < 3 * r.std() / np.sqrt(r.size)

    def test_estimator_standardizes(self):
        z = 5.0 * ar1(10_000, 0.5, 6)
        est = LinearPredictionWhitener(order=2).fit(z)
        assert np.std(est.transform(z)) == pytest.approx(1.0, rel=1e-6)

    def test_json_round_trip(self, tmp_path):
        est = LinearPredictionWhitener(order=3).fit(ar1(5000, 0.6, 7))
        est.save(tmp_path / "w.json")
        back = LinearPredictionWhitener.load(tmp_path / "w.json")
        z = ar1(300, 0.6, 8)
        assert np.array_equal(back.transform(z), est.transform(z))


class TestEcdf:
    def test_rank_counting(self):
        assert apply_ecdf(fit_ecdf([1, 2, 3, 4]), 2) == pytest.approx(0.4)

    def test_clamped_low(self):
        assert apply_ecdf(fit_ecdf([1, 2, 3, 4]), -10) == pytest.approx(1 / 5)

    def test_clamped_high(self):
        assert apply_ecdf(fit_ecdf([1, 2, 3, 4]), 99) == pytest.approx(4 / 5)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            fit_ecdf(np.array([]))

    def test_fresh_draw_uniform(self):
        rng = np.random.default_rng(0)
        m = fit_ecdf(rng.gamma(2.0, size=10_000))
        u = apply_ecdf(m, rng.gamma(2.0, size=10_000))
        assert stats.kstest(u, "uniform").statistic < 0.03

    def test_per_component(self):
        rng = np.random.default_rng(1)
        ref = np.column_stack([rng.normal(size=500), 100 + rng.normal(size=500)])
        u = apply_ecdf(fit_ecdf(ref), np.array([[0.0, 100.0]]))
        assert np.allclose(u, 0.5, atol=0.06)

    def test_thinning_keeps_quantiles(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=20_000)
        m = fit_ecdf(x, max_reference=999)
        assert m.n == 999
        u = apply_ecdf(m, rng.normal(size=5000))
        assert stats.kstest(u, "uniform").statistic < 0.03

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_monotone(self, ref, a, b):
        m = fit_ecdf(ref)
        lo, hi = sorted((a, b))
        assert apply_ecdf(m, lo) <= apply_ecdf(m, hi)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50), st.floats(-1e9, 1e9))
    def test_strictly_interior(self, ref, v):
        assert 0.0 < apply_ecdf(fit_ecdf(ref), v) < 1.0

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        est = EmpiricalCdfTransformer().fit(rng.normal(size=(100, 3)))
        est.save(tmp_path / "e.json")
        back = EmpiricalCdfTransformer.load(tmp_path / "e.json")
        X = rng.normal(size=(20, 3))
        assert np.array_equal(back.transform(X), est.transform(X))

    def test_single_component_schema(self):
        d = fit_ecdf([3.0, 1.0, 2.0]).to_dict()
        assert d == {"sorted": [1.0, 2.0, 3.0]}
        assert EcdfModel.from_dict(d).n == 3
