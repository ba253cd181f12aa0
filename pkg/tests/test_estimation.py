import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import ndha.estimation as est
from conftest import shipped_experiments
from ndha.estimation import (CalibrationProblem, aic, beale_region, collinearity_index, default_bounds, fim, fit,
                             identifiability, objective, pattern_search, scaled_residuals, sensitivities,
                             subset_search)
from ndha.model import Environment
from ndha.simulate import Experiment, MeasuredSeries, observables, simulate

T = np.arange(1.0, 11.0)
SIGMA = 0.5


def _stub_experiment(values=None):
    values = np.zeros_like(T) if values is None else values
    return Experiment("stub", Environment(), np.zeros(15), (), 20.0, (MeasuredSeries("DO", T, values, SIGMA),))


def _stub_predictions(model):
    def predictions(problem, params, rtol=None, atol=None):
        return [[model(params)] for _ in problem.experiments]
    return predictions


def _poly(params):
    return params["mu_NOB"] * T + params["k_H"] * T ** 2 + 0.0 * params["b_NOB"]


@pytest.fixture
def nob_truth(truth):
    exp = shipped_experiments()["nob_1"]
    traj = simulate(exp, truth)
    clean = tuple(dataclasses.replace(s, values=observables(traj, s.name, s.times)) for s in exp.series)
    return exp.with_series(clean)


# -- objective ------------------------------------------------------------------------

def test_objective_is_zero_at_generating_parameters(nob_truth, truth):
    p = CalibrationProblem((nob_truth,), ("mu_NOB",), truth)
    assert objective({"mu_NOB": truth["mu_NOB"]}, p) == pytest.approx(0.0, abs=1e-20)


def test_one_sigma_offset_gives_unit_objective_per_experiment(nob_truth, truth):
    shifted = nob_truth.with_series(tuple(dataclasses.replace(s, values=s.values + s.sigma) for s in nob_truth.series))
    p = CalibrationProblem((shifted, shifted), ("mu_NOB",), truth)
    assert objective({"mu_NOB": truth["mu_NOB"]}, p) == pytest.approx(2.0, rel=1e-10)


def test_objective_matches_hand_recomputation(truth):
    exps = [e for k, e in shipped_experiments().items() if k in ("nob_1", "an_hb_1")]
    p = CalibrationProblem(tuple(exps), ("mu_NOB",), truth)
    total = 0.0
    for e in exps:
        traj = simulate(e, truth)
        sq = [((observables(traj, s.name, s.times) - s.values) / s.sigma) ** 2 for s in e.series]
        total += sum(x.sum() for x in sq) / sum(len(x) for x in sq)
    assert objective([truth["mu_NOB"]], p) == pytest.approx(total, rel=1e-12)


def test_failed_simulation_is_penalized(monkeypatch, truth):
    def broken(problem, params, rtol=None, atol=None):
        raise est.IntegrationError("nope")
    monkeypatch.setattr(est, "predictions", broken)
    p = CalibrationProblem((_stub_experiment(),), ("mu_NOB",), truth)
    assert objective([1.0], p) == est.FAIL_PENALTY


def test_problem_validation(truth):
    exp = _stub_experiment()
    with pytest.raises(ValueError):
        CalibrationProblem((), ("mu_NOB",), truth)
    with pytest.raises(ValueError):
        CalibrationProblem((exp,), (), truth)
    with pytest.raises(KeyError):
        CalibrationProblem((exp,), ("mu_XYZ",), truth)
    with pytest.raises(ValueError):
        CalibrationProblem((exp,), ("mu_NOB",), truth, {"mu_NOB": (2.0, 1.0)})


def test_default_bounds():
    assert default_bounds(0.5, "mu_NOB") == (0.005, 50.0)
    assert default_bounds(0.16, "eta_NOR") == (0.0016, 1.0)


# -- Fisher information, collinearity, Beale ----------------------------------------------

def test_fim_of_linear_model_matches_closed_form(monkeypatch, truth):
    monkeypatch.setattr(est, "predictions", _stub_predictions(_poly))
    p = CalibrationProblem((_stub_experiment(),), ("mu_NOB", "k_H"), truth)
    F, cov, S, _ = fim(p, {"mu_NOB": 0.7, "k_H": 2.0})
    want = np.array([[(T ** 2).sum(), (T ** 3).sum()], [(T ** 3).sum(), (T ** 4).sum()]]) / SIGMA ** 2
    assert F == pytest.approx(want, rel=1e-7)
    assert cov @ want == pytest.approx(np.eye(2), abs=1e-6)


def test_identifiability_block_of_linear_model(monkeypatch, truth):
    monkeypatch.setattr(est, "predictions", _stub_predictions(_poly))
    p = CalibrationProblem((_stub_experiment(),), ("mu_NOB", "k_H"), truth)
    vals = {"mu_NOB": 0.7, "k_H": 2.0}
    res = identifiability(p, vals, j_opt=0.5)
    cov = np.linalg.inv(np.array([[(T ** 2).sum(), (T ** 3).sum()], [(T ** 3).sum(), (T ** 4).sum()]]) / SIGMA ** 2)
    assert res.cv["mu_NOB"] == pytest.approx(math.sqrt(cov[0, 0]) / 0.7 * 100, rel=1e-6)
    assert res.correlation[0, 1] == pytest.approx(cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1]), rel=1e-6)
    t, t2 = T / np.linalg.norm(T), T ** 2 / np.linalg.norm(T ** 2)
    assert res.gamma == pytest.approx(1 / math.sqrt(1 - abs(t @ t2)), rel=1e-6)


def test_collinearity_index_extremes():
    assert collinearity_index(np.eye(5)[:, :3]) == pytest.approx(1.0, abs=1e-12)
    col = np.arange(1.0, 6.0)
    assert collinearity_index(np.column_stack([col, 3 * col])) > 1e6
    assert collinearity_index(np.column_stack([col, np.zeros(5)])) == math.inf


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 100.0), min_size=3, max_size=3), st.integers(0, 1000))
def test_collinearity_index_ignores_column_scale(scales, seed):
    S = np.random.default_rng(seed).normal(size=(20, 3))
    assert collinearity_index(S * scales) == pytest.approx(collinearity_index(S), rel=1e-8)


def test_beale_threshold_matches_f_table():
    # F(0.95; 2, 98) = 3.089 from printed tables
    assert beale_region(1.0, 2, 100) == pytest.approx(1 + 2 / 98 * 3.089, abs=1e-4)
    assert beale_region(1.0, 2, 100) == pytest.approx(1.0633, abs=1e-3)
    assert beale_region(2.5, 2, 100) == pytest.approx(2.5 * beale_region(1.0, 2, 100), rel=1e-14)
    for bad in ((1.0, 0, 10), (1.0, 10, 10)):
        with pytest.raises(ValueError):
            beale_region(*bad)


def test_aic_hand_values():
    assert aic(50.0, 100, 3) == pytest.approx(100 * math.log(0.5) + 6, rel=1e-15)
    assert aic(0.0, 10, 1) == -math.inf


def test_richardson_ratio_of_central_differences(monkeypatch, truth):
    model = lambda p: np.exp(-p["mu_NOB"] * T / 3)
    monkeypatch.setattr(est, "predictions", _stub_predictions(model))
    p = CalibrationProblem((_stub_experiment(),), ("mu_NOB",), truth)
    a = 0.7
    exact = -T / 3 * np.exp(-a * T / 3) / SIGMA
    e1 = np.abs(sensitivities(p, {"mu_NOB": a}, step=1e-2)[:, 0] - exact).max()
    e2 = np.abs(sensitivities(p, {"mu_NOB": a}, step=5e-3)[:, 0] - exact).max()
    assert e1 / e2 == pytest.approx(4.0, rel=0.02)


# -- search ----------------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=4))
def test_pattern_search_finds_quadratic_minimum(center):
    c = np.array(center)
    u, fu, evals = pattern_search(lambda u: float(((u - c) ** 2).sum()), np.full(len(c), 0.5), min_mesh=1e-8)
    assert np.abs(u - c).max() < 1e-6 and fu < 1e-11


def test_pattern_search_stops_at_box_edge():
    u, _, _ = pattern_search(lambda u: float(((u - 1.7) ** 2).sum()), np.array([0.2, 0.9]))
    assert np.allclose(u, 1.0)


def test_noise_free_recovery(nob_truth, truth):
    p = CalibrationProblem((nob_truth,), ("mu_NOB", "k_H"), truth.replace(mu_NOB=0.78, k_H=2.21))
    res = fit(p, n_global=30, n_polish=3, seed=1)
    for n in ("mu_NOB", "k_H"):
        assert res.values[n] == pytest.approx(truth[n], rel=1e-3)
    assert res.j_opt < 1e-6


def test_fit_is_deterministic_for_a_seed(monkeypatch, truth):
    monkeypatch.setattr(est, "predictions", _stub_predictions(_poly))
    data = 0.7 * T + 2.0 * T ** 2 + np.random.default_rng(0).normal(0, SIGMA, T.size)
    p = CalibrationProblem((_stub_experiment(data),), ("mu_NOB", "k_H"), truth)
    a, b = fit(p, n_global=20, n_polish=2, seed=5), fit(p, n_global=20, n_polish=2, seed=5)
    assert a.values == b.values and a.j_opt == b.j_opt


def test_subset_search_prefers_informative_pair(monkeypatch, truth):
    model = lambda p: 20 * p["mu_NOB"] * T + p["k_H"] * T ** 2 + 0.0 * p["b_NOB"]
    monkeypatch.setattr(est, "predictions", _stub_predictions(model))
    data = 14.0 * T + 2.0 * T ** 2 + np.random.default_rng(1).normal(0, 0.05, T.size)
    p = CalibrationProblem((_stub_experiment(data),), ("mu_NOB", "k_H", "b_NOB"),
                           truth.replace(mu_NOB=1.0, k_H=1.0))
    table = subset_search(p, n_global=20, n_polish=2)
    assert table.winner.names == ("k_H", "mu_NOB")
    assert table.stopped_at == 3
    assert all(not r.result.identifiable for r in table.by_size(3))
    best1 = table.by_size(1)[0].result
    assert table.winner.result.aic < best1.aic
    # nested fits: the superset never fits worse
    assert table.winner.result.j_opt <= best1.j_opt


def test_scaled_residual_length(nob_truth, truth):
    p = CalibrationProblem((nob_truth,), ("mu_NOB",), truth)
    assert scaled_residuals(p, truth).shape == (p.n_points,)
