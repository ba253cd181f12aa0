import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndha.params import FIXED_PARAMETERS
from ndha.sensitivity import (SamplePlan, SrcResult, lhs_sample, lhs_unit, rank_parameters, run_gsa,
                              src_coefficients)
from ndha.simulate import IntegrationError


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 200), st.integers(1, 6), st.integers(0, 2**31))
def test_lhs_has_one_point_per_stratum(n, p, seed):
    U = lhs_unit(n, p, np.random.default_rng(seed))
    assert U.shape == (n, p)
    assert np.all((U >= 0) & (U < 1))
    for j in range(p):
        assert sorted(np.floor(U[:, j] * n).astype(int)) == list(range(n))


def test_lhs_sample_respects_bounds_and_seed():
    plan = SamplePlan(("a", "b"), np.array([1.0, -5.0]), np.array([2.0, 5.0]), n=50, seed=3)
    X = lhs_sample(plan)
    assert np.all(X >= plan.lower) and np.all(X <= plan.upper)
    assert np.array_equal(X, lhs_sample(plan))
    assert not np.array_equal(X, lhs_sample(SamplePlan(plan.names, plan.lower, plan.upper, 50, seed=4)))


@pytest.mark.parametrize("kw", [dict(lower=[0.0], upper=[1.0, 2.0]), dict(lower=[2.0, 0.0], upper=[1.0, 1.0]),
                                dict(lower=[0.0, 0.0], upper=[1.0, 1.0], n=1)])
def test_sample_plan_validation(kw):
    args = dict(names=("a", "b"), n=10) | kw
    args["lower"], args["upper"] = np.array(args["lower"]), np.array(args["upper"])
    with pytest.raises(ValueError):
        SamplePlan(**args)


def test_plan_from_classes_skips_fixed_parameters(defaults):
    plan = SamplePlan.from_classes(defaults, n=10)
    assert plan.names and not set(plan.names) & FIXED_PARAMETERS
    for name, lo, hi in zip(plan.names, plan.lower, plan.upper):
        assert (lo, hi) == defaults.class_range(name)


def test_src_of_linear_model_matches_closed_form():
    # y = 2 a + b with a, b independent U(0, 1): beta_i = c_i sd_i / sd_y = (2, 1) / sqrt(5)
    plan = SamplePlan(("a", "b"), np.zeros(2), np.ones(2), n=2000, seed=1)
    X = lhs_sample(plan)
    res = src_coefficients(X, 2 * X[:, 0] + X[:, 1], plan.names)
    b = res.beta[0]
    assert b[0] / b[1] == pytest.approx(2.0, rel=0.05)
    assert b == pytest.approx(np.array([2.0, 1.0]) / np.sqrt(5.0), rel=0.03)
    assert res.r2[0] == pytest.approx(1.0, abs=1e-12)
    assert (b ** 2).sum() == pytest.approx(1.0, abs=0.02)


def test_constant_output_gets_zero_beta_and_is_not_valid():
    X = lhs_sample(SamplePlan(("a", "b"), np.zeros(2), np.ones(2), n=40))
    res = src_coefficients(X, np.column_stack([np.full(40, 3.0), X[:, 0]]), ("a", "b"))
    assert np.all(res.beta[0] == 0.0) and res.r2[0] == 0.0
    assert list(res.valid) == [False, True]


def test_src_rejects_too_few_or_degenerate_samples():
    with pytest.raises(ValueError):
        src_coefficients(np.ones((3, 2)), np.ones(3), ("a", "b"))
    X = np.column_stack([np.linspace(0, 1, 10), np.full(10, 2.0)])
    with pytest.raises(np.linalg.LinAlgError):
        src_coefficients(X, X[:, 0], ("a", "b"))


def test_ranking_uses_only_valid_points_in_window():
    beta = np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0], [0.0, 0.0, 0.99]])
    res = SrcResult(("a", "b", "c"), np.array([0.0, 1.0, 2.0]), beta, np.array([0.9, 0.9, 0.5]))
    assert [n for n, _ in rank_parameters(res)][:2] == ["a", "b"]
    assert rank_parameters(res)[0][1] == pytest.approx(0.82)
    assert rank_parameters(res, window=(0.5, 1.5))[0][0] == "b"
    with pytest.raises(ValueError):
        rank_parameters(res, window=(1.5, 3.0))
    assert np.allclose(res.cumulative_beta2()[-1], [0.82, 0.82, 0.0])


def test_ties_are_broken_by_name():
    res = SrcResult(("z", "a"), np.zeros(1), np.array([[0.5, 0.5]]), np.array([0.9]))
    assert [n for n, _ in rank_parameters(res, exclude=())] == ["a", "z"]


def test_displayed_threshold():
    res = SrcResult(("a", "b"), np.zeros(2), np.array([[0.1, 0.15], [0.05, 0.3]]), np.array([0.9, 0.9]))
    assert res.displayed() == ["b"]


class _Traj:
    def __init__(self, value):
        self.value = value


def _fake_simulator(fail_every=0):
    calls = {"n": 0}

    def sim(exp, params):
        calls["n"] += 1
        if fail_every and calls["n"] % fail_every == 0:
            raise IntegrationError("boom")
        return _Traj(3.0 * params["mu_NOB"] - params["k_H"])
    return sim


@pytest.fixture
def fake_observables(monkeypatch):
    import ndha.sensitivity as sens
    monkeypatch.setattr(sens, "observables", lambda traj, o, times: np.full(len(times), traj.value))


def test_run_gsa_with_stub_simulator(defaults, fake_observables):
    from ndha.simulate import Experiment
    from ndha.model import Environment
    exp = Experiment("stub", Environment(), np.zeros(15), (), 10.0, (), 5.0)
    plan = SamplePlan.from_classes(defaults, ["mu_NOB", "k_H"], n=60, seed=2)
    res = run_gsa(exp, defaults, plan, simulator=_fake_simulator())
    assert res.failures == 0
    assert res.ranking("DO")[0][0] == "mu_NOB"
    assert np.allclose(res.src["DO"].r2, 1.0)


def test_run_gsa_tolerates_few_failures_and_rejects_many(defaults, fake_observables):
    from ndha.simulate import Experiment
    from ndha.model import Environment
    exp = Experiment("stub", Environment(), np.zeros(15), (), 10.0, (), 5.0)
    plan = SamplePlan.from_classes(defaults, ["mu_NOB", "k_H"], n=60, seed=2)
    assert run_gsa(exp, defaults, plan, simulator=_fake_simulator(fail_every=20)).failures == 3
    with pytest.raises(RuntimeError):
        run_gsa(exp, defaults, plan, simulator=_fake_simulator(fail_every=5))
