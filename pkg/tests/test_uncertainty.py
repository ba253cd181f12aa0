import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import shipped_experiments
from ndha.params import CALIBRATED_ESTIMATES
from ndha.simulate import observables, simulate
from ndha.uncertainty import (ParameterDistribution, PredictionBand, PropagationError, aril, band_from_samples,
                              pci_puci, propagate)

ESTIMATED = tuple(CALIBRATED_ESTIMATES)


def _band(lower, upper, n=5):
    t = np.arange(float(n))
    lo, hi = np.full(n, float(lower)), np.full(n, float(upper))
    return PredictionBand(t, lo, 0.5 * (lo + hi), hi, 100)


# -- metrics -------------------------------------------------------------------------

def test_aril_trivial_cases():
    t = np.arange(5.0)
    assert aril(_band(2, 2), t, np.full(5, 2.0)) == (0.0, 0)
    assert aril(_band(1, 3), t, np.full(5, 2.0)) == (1.0, 0)


def test_pci_puci_trivial_cases():
    t = np.arange(5.0)
    assert pci_puci(_band(1, 3), t, np.full(5, 2.0)) == (1.0, 1.0)
    assert pci_puci(_band(1, 3), t, np.full(5, 7.0)) == (0.0, 0.0)


def test_aril_excludes_near_zero_data():
    t = np.arange(5.0)
    data = np.array([0.0, 1e-4, 2.0, 2.0, 2.0])
    value, excluded = aril(_band(1, 3), t, data)
    assert value == 1.0 and excluded == 2
    with pytest.raises(ValueError):
        aril(_band(1, 3), t, np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=30), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_metric_ranges(data, below, above):
    y = np.array(data)
    t = np.arange(float(len(y)))
    m = float(np.median(y))
    band = PredictionBand(t, np.full(len(y), m - below), np.full(len(y), m), np.full(len(y), m + above), 10)
    a, _ = aril(band, t, y)
    pci, puci = pci_puci(band, t, y)
    assert a >= 0 and 0 <= pci <= 1 and puci >= 0


def test_band_order_is_enforced():
    with pytest.raises(ValueError):
        PredictionBand(np.arange(2.0), np.ones(2), np.zeros(2), np.ones(2), 1)


# -- distributions --------------------------------------------------------------------

def test_calibrated_distribution_ranges():
    d = ParameterDistribution.from_calibration({"mu_NOB": 0.67}, {"mu_NOB": 1.0})
    assert d.lower[0] == pytest.approx(0.67 * (1 - 0.0196)) and d.upper[0] == pytest.approx(0.67 * 1.0196)
    assert d.source == "calibrated"


def test_distribution_validation():
    with pytest.raises(ValueError):
        ParameterDistribution(("a",), np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        ParameterDistribution(("a",), np.array([1.0]), np.array([1.0]), source="guess")
    with pytest.raises(ValueError):
        ParameterDistribution(("a",), np.array([1.0]), np.array([2.0])).sample(5, 0, correlated=True)


def test_correlated_samples_follow_correlation():
    d = ParameterDistribution.from_calibration({"mu_NOB": 1.0, "k_H": 2.0}, {"mu_NOB": 2.0, "k_H": 2.0},
                                               z=10.0, correlation=np.array([[1.0, 0.9], [0.9, 1.0]]))
    X = d.sample(4000, 0, correlated=True)
    assert np.corrcoef(X.T)[0, 1] == pytest.approx(0.9, abs=0.02)


# -- propagation ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def nob():
    return shipped_experiments()["nob_1"]


def test_zero_width_distribution_collapses_to_trajectory(nob, truth):
    v = np.array([truth[n] for n in ("mu_NOB", "k_H")])
    d = ParameterDistribution(("mu_NOB", "k_H"), v, v)
    res = propagate(d, nob, truth, n_samples=50, outputs=("DO",))
    band = res.bands["DO"]
    want = observables(simulate(nob, truth), "DO", band.times)
    assert np.array_equal(band.lower, band.upper)
    assert band.median == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_quantiles_match_sort_oracle(nob, truth):
    d = ParameterDistribution.from_classes(truth, ("mu_NOB", "k_H"))
    band = propagate(d, nob, truth, n_samples=60, seed=4).bands["DO"]
    S = np.sort(band.samples, axis=0)
    n = S.shape[0]
    for q, got in zip((2.5, 50.0, 97.5), (band.lower, band.median, band.upper)):
        pos = q / 100 * (n - 1)
        k = int(math.floor(pos))
        want = S[k] + (pos - k) * (S[min(k + 1, n - 1)] - S[k])
        assert got == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_propagation_is_deterministic(nob, truth):
    d = ParameterDistribution.from_classes(truth, ("mu_NOB",))
    a = propagate(d, nob, truth, n_samples=50, seed=9).bands["DO"]
    b = propagate(d, nob, truth, n_samples=50, seed=9).bands["DO"]
    assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)


def test_propagation_checks_sample_count_and_failures(nob, truth, monkeypatch):
    d = ParameterDistribution.from_classes(truth, ("mu_NOB",))
    with pytest.raises(ValueError):
        propagate(d, nob, truth, n_samples=10)
    import ndha.uncertainty as unc
    calls = {"n": 0}
    real = unc.simulate

    def flaky(exp, params):
        calls["n"] += 1
        if calls["n"] % 4 == 0:
            raise unc.IntegrationError("flaky")
        return real(exp, params)
    monkeypatch.setattr(unc, "simulate", flaky)
    with pytest.raises(PropagationError, match="failed"):
        propagate(d, nob, truth, n_samples=50)


def _quantile_se(samples, q):
    """Half-width of the order-statistic 68 % interval for the q-quantile."""
    S = np.sort(samples, axis=0)
    n = S.shape[0]
    p = q / 100
    m = math.sqrt(n * p * (1 - p))
    lo = S[max(int(p * n - m), 0)]
    hi = S[min(int(math.ceil(p * n + m)), n - 1)]
    return 0.5 * (hi - lo)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_wider_ranges_never_shrink_the_band(truth, seed):
    exp = shipped_experiments()["nob_1"]
    d = ParameterDistribution.from_classes(truth, ("mu_NOB", "k_H", "K_NOB.O2"))
    narrow = propagate(d, exp, truth, n_samples=500, seed=seed).bands["DO"]
    wide = propagate(d.widened(1.5), exp, truth, n_samples=500, seed=seed).bands["DO"]
    tol = sum(_quantile_se(b.samples, q) for b in (narrow, wide) for q in (2.5, 97.5))
    assert np.all(wide.upper - wide.lower >= narrow.upper - narrow.lower - tol)


def test_calibrated_bands_are_narrower_on_every_shipped_example(truth):
    calibrated = ParameterDistribution.from_calibration({n: truth[n] for n in ESTIMATED},
                                                        {n: cv for n, (_, cv) in CALIBRATED_ESTIMATES.items()})
    wide = ParameterDistribution(ESTIMATED, calibrated.mean * 0.5, calibrated.mean * 1.5)
    for name, exp in shipped_experiments().items():
        out = exp.series[0].name
        a = propagate(calibrated, exp, truth, n_samples=60, seed=1, outputs=(out,)).bands[out]
        b = propagate(wide, exp, truth, n_samples=60, seed=1, outputs=(out,)).bands[out]
        wa, wb = a.upper - a.lower, b.upper - b.lower
        assert np.all(wa <= wb + 1e-9 * (1 + np.abs(b.median))), name
        assert wa.sum() < wb.sum(), name


def test_band_from_samples_keeps_optional_samples():
    X = np.random.default_rng(0).normal(size=(100, 4))
    assert band_from_samples(np.arange(4.0), X, keep=False).samples is None
    assert band_from_samples(np.arange(4.0), X).n_effective == 100
