import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import shipped_experiments
from ndha.diagnostics import (ResidualSeries, acf, decimate, diagnostics_report, f_test_unit_line, janus,
                              ks_normality, lilliefors_statistic, msep_decomposition, qq_summary, r2, rmse)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# -- MSEP ---------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=50))
def test_msep_fractions_sum_to_one(pairs):
    obs, sim = map(np.array, zip(*pairs))
    m = msep_decomposition(obs, sim)
    if m.msep > 1e-12:
        assert m.me + m.se + m.nc == pytest.approx(1.0, abs=1e-10)
        assert m.me >= 0 and m.se >= 0


def test_msep_pure_bias_and_pure_slope():
    obs = np.linspace(0.0, 10.0, 21)
    bias = msep_decomposition(obs, obs + 3.0)
    assert (bias.msep, bias.me, bias.se) == pytest.approx((9.0, 1.0, 0.0), abs=1e-12)
    slope = msep_decomposition(obs, obs.mean() + 2 * (obs - obs.mean()))
    assert slope.se == pytest.approx(1.0, abs=1e-12) and slope.me == pytest.approx(0.0, abs=1e-12)


def test_msep_of_perfect_fit_is_zero():
    m = msep_decomposition([1.0, 2.0], [1.0, 2.0])
    assert m.msep == 0.0 and math.isnan(m.me)


# -- autocorrelation ----------------------------------------------------------------

def test_acf_lag_zero_is_one():
    x = np.random.default_rng(0).normal(size=100)
    a = acf(x, 10)
    assert a.values[0] == 1.0 and a.band == pytest.approx(1.96 / 10)


def test_acf_of_ar1_matches_theory():
    rng = np.random.default_rng(42)
    phi, n = 0.8, 5000
    e = rng.normal(size=n + 500)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, len(e)):
        x[i] = phi * x[i - 1] + e[i]
    a = acf(x[500:], 5)
    assert np.abs(a.values - phi ** np.arange(6)).max() < 0.05


def test_acf_of_constant_series_and_lag_bounds():
    assert list(acf(np.ones(10), 3).values) == [1.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        acf(np.ones(10), 5)


def test_white_noise_mostly_inside_band():
    a = acf(np.random.default_rng(3).normal(size=2000), 40)
    assert a.fraction_inside() >= 0.85


# -- normality ------------------------------------------------------------------------

def test_lilliefors_statistic_matches_direct_formula():
    x = np.random.default_rng(1).normal(2.0, 3.0, size=25)
    z = (x - x.mean()) / x.std(ddof=1)
    ecdf_hi = np.arange(1, 26) / 25
    want = max(np.max(ecdf_hi - stats.norm.cdf(np.sort(z))), np.max(stats.norm.cdf(np.sort(z)) - (ecdf_hi - 1 / 25)))
    assert lilliefors_statistic(x) == pytest.approx(want, rel=1e-12)


def test_lilliefors_critical_value_matches_table():
    # tabulated 5% critical value at n = 30 is about 0.161
    res = ks_normality(np.random.default_rng(0).normal(size=30), replicates=20000)
    assert res.critical == pytest.approx(0.161, abs=0.005)


def test_lilliefors_size_is_nominal():
    rng = np.random.default_rng(7)
    trials = 600
    rejected = sum(ks_normality(rng.normal(size=40), replicates=2000, seed=1).reject for _ in range(trials))
    # binomial standard error at alpha = 0.05 is ~0.009; allow 3 of them
    assert abs(rejected / trials - 0.05) < 3 * math.sqrt(0.05 * 0.95 / trials)


def test_strongly_non_normal_series_is_rejected():
    alternating = np.tile([1.0, -1.0], 50)
    assert ks_normality(alternating).reject
    assert ks_normality(np.random.default_rng(0).exponential(size=200)).reject


def test_normality_input_checks():
    with pytest.raises(ValueError):
        ks_normality([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        ks_normality(np.ones(10))
    with pytest.raises(ValueError):
        ks_normality(np.arange(10.0), alpha=1.5)


def test_qq_summary_of_normal_sample():
    q = qq_summary(np.random.default_rng(2).normal(size=500))
    assert q["qq_correlation"] > 0.99


def test_normality_test_is_seeded():
    x = np.random.default_rng(5).normal(size=30)
    assert ks_normality(x, replicates=500, seed=3) == ks_normality(x, replicates=500, seed=3)


# -- agreement statistics --------------------------------------------------------------

def test_f_test_matches_regression_route():
    rng = np.random.default_rng(0)
    sim = np.linspace(0, 10, 40)
    obs = 0.3 + 1.1 * sim + rng.normal(0, 0.5, sim.size)
    got = f_test_unit_line(obs, sim)
    lr = stats.linregress(sim, obs)
    sse1 = ((obs - lr.intercept - lr.slope * sim) ** 2).sum()
    sse0 = ((obs - sim) ** 2).sum()
    assert got.statistic == pytest.approx((sse0 - sse1) / 2 / (sse1 / 38), rel=1e-10)
    assert got.slope == pytest.approx(lr.slope, rel=1e-10)
    assert got.critical == pytest.approx(stats.f.ppf(0.95, 2, 38), rel=1e-12)
    assert not got.passed


def test_f_test_passes_on_identity_and_formats():
    sim = np.linspace(0, 1, 10)
    t = f_test_unit_line(sim, sim)
    assert t.passed and t.statistic == 0.0
    assert t.format().startswith("1 (0/")


def test_rmse_r2_janus():
    assert rmse([3.0, -4.0]) == pytest.approx(math.sqrt(12.5))
    assert r2([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    cal = np.array([1.0, -1.0, 1.0])
    assert janus(cal, 2 * cal) == pytest.approx(2.0)
    assert janus(ResidualSeries(np.arange(3.0), cal), cal) == 1.0
    with pytest.raises(ValueError):
        janus(np.zeros(3), cal)


def test_residual_series_rejects_bad_input():
    with pytest.raises(ValueError):
        ResidualSeries(np.arange(3.0), np.arange(4.0))
    with pytest.raises(ValueError):
        ResidualSeries(np.arange(2.0), np.array([0.0, np.nan]))


# -- experiment-level helpers ---------------------------------------------------------------

def test_decimate_keeps_every_kth_point():
    exp = shipped_experiments()["nob_1"]
    s = exp.series[0]
    native = float(np.median(np.diff(s.times)))
    d = decimate(exp, 4 * native)
    assert np.array_equal(d.series[0].times, s.times[::4])
    with pytest.raises(ValueError):
        decimate(exp, 1.5 * native)
    with pytest.raises(ValueError):
        decimate(exp, native * (len(s) // 5))


def test_diagnostics_report_has_pooled_row(truth):
    exps = [shipped_experiments()["nob_1"]]
    rep = diagnostics_report(exps, truth, replicates=500)
    assert set(rep) == {"NOB_1:DO", "combined"}
    row = rep["NOB_1:DO"]
    assert row["ME"] + row["SE"] + row["NC"] == pytest.approx(1.0, abs=1e-10)
    assert row["r2"] > 0.9
