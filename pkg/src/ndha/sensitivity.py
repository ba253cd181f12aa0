"""Latin-hypercube sampling and standardized-regression-coefficient sensitivity.

Regression is done per output time point; only time points whose linear
regression explains the Monte-Carlo variance well (R^2 > 0.7) count toward the
cumulative ranking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .params import FIXED_PARAMETERS, ParameterSet
from .simulate import Experiment, IntegrationError, observables, simulate

log = logging.getLogger(__name__)

R2_VALID = 0.7
DISPLAY_BETA2 = 0.02


@dataclass(frozen=True)
class SamplePlan:
    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    n: int
    seed: int = 0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (len(self.names),) or hi.shape != lo.shape:
            raise ValueError("one lower and one upper bound per parameter")
        if np.any(hi < lo):
            raise ValueError("upper bound below lower bound")
        if self.n < 2:
            raise ValueError("need at least 2 samples")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_classes(cls, params: ParameterSet, names: Sequence[str] | None = None,
                     n: int = 500, seed: int = 0) -> "SamplePlan":
        """Uniform ranges from uncertainty classes; fixed parameters are skipped by default."""
        if names is None:
            names = [k for k in params if k not in FIXED_PARAMETERS]
        ranges = [params.class_range(k) for k in names]
        return cls(tuple(names), np.array([r[0] for r in ranges]),
                   np.array([r[1] for r in ranges]), n, seed)


def lhs_unit(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """n x p Latin hypercube on [0, 1): one point per stratum per column."""
    u = rng.random((n, p))
    strata = np.column_stack([rng.permutation(n) for _ in range(p)])
    return (strata + u) / n


def lhs_sample(plan: SamplePlan) -> np.ndarray:
    rng = np.random.default_rng(plan.seed)
    U = lhs_unit(plan.n, len(plan.names), rng)
    return plan.lower + U * (plan.upper - plan.lower)


@dataclass(frozen=True)
class SrcResult:
    names: tuple[str, ...]
    times: np.ndarray        # (m,)
    beta: np.ndarray         # (m, p)
    r2: np.ndarray           # (m,)

    @property
    def valid(self) -> np.ndarray:
        return self.r2 > R2_VALID

    def cumulative_beta2(self, window: tuple[float, float] | None = None) -> np.ndarray:
        """Running sum of beta^2 over valid time points (uniform time weighting)."""
        b2 = np.where(self._mask(window)[:, None], self.beta ** 2, 0.0)
        return np.cumsum(b2, axis=0)

    def _mask(self, window):
        m = self.valid.copy()
        if window is not None:
            m &= (self.times >= window[0]) & (self.times <= window[1])
        return m

    def displayed(self) -> list[str]:
        """Parameters whose beta^2 exceeds the display threshold at some valid point."""
        b2 = np.where(self.valid[:, None], self.beta ** 2, 0.0)
        return [n for n, v in zip(self.names, b2.max(axis=0) if len(b2) else []) if v > DISPLAY_BETA2]


def _standardize(A):
    mu = A.mean(axis=0)
    sd = A.std(axis=0)
    return (A - mu) / np.where(sd > 0, sd, 1.0), sd


def src_coefficients(samples: np.ndarray, outputs: np.ndarray, names: Sequence[str],
                     times=None) -> SrcResult:
    """OLS of standardized outputs on standardized inputs, one regression per output column.

    ``outputs`` is (N,) or (N, m). A constant output column gets beta = 0, R^2 = 0.
    """
    X = np.asarray(samples, dtype=float)
    Y = np.asarray(outputs, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if n <= p + 1:
        raise ValueError(f"need more samples ({n}) than parameters + 1 ({p + 1})")
    Xs, xsd = _standardize(X)
    if np.any(xsd == 0) or np.linalg.matrix_rank(Xs) < p:
        raise np.linalg.LinAlgError("rank-deficient sample matrix")
    Ys, ysd = _standardize(Y)
    beta, *_ = np.linalg.lstsq(Xs, Ys, rcond=None)
    resid = Ys - Xs @ beta
    sst = (Ys ** 2).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(sst > 0, 1.0 - (resid ** 2).sum(axis=0) / np.where(sst > 0, sst, 1.0), 0.0)
    beta = beta.T
    beta[ysd == 0] = 0.0
    t = np.arange(Y.shape[1], dtype=float) if times is None else np.asarray(times, dtype=float)
    return SrcResult(tuple(names), t, beta, r2)


def rank_parameters(src: SrcResult, window: tuple[float, float] | None = None,
                    exclude=FIXED_PARAMETERS) -> list[tuple[str, float]]:
    """Parameters ordered by summed beta^2 over valid points; ties broken by name."""
    mask = src._mask(window)
    if not mask.any():
        raise ValueError("no valid (R^2 > 0.7) time point in the ranking window")
    score = (src.beta[mask] ** 2).sum(axis=0)
    ranked = [(n, float(s)) for n, s in zip(src.names, score) if n not in exclude]
    return sorted(ranked, key=lambda x: (-x[1], x[0]))


@dataclass(frozen=True)
class GsaResult:
    plan: SamplePlan
    samples: np.ndarray
    src: dict[str, SrcResult]          # per observable
    failures: int

    def ranking(self, observable: str, window=None):
        return rank_parameters(self.src[observable], window)


def run_gsa(experiment: Experiment, params: ParameterSet, plan: SamplePlan,
            outputs: Sequence[str] = ("DO",), times=None,
            simulator: Callable = simulate) -> GsaResult:
    """Simulate every LHS sample and regress each observable at each output time."""
    X = lhs_sample(plan)
    if times is None:
        times = np.arange(0.0, experiment.horizon + 1e-9, experiment.report_interval)
    times = np.asarray(times, dtype=float)
    Y = {o: np.full((plan.n, len(times)), np.nan) for o in outputs}
    failures = 0
    for i, row in enumerate(X):
        try:
            traj = simulator(experiment, params.replace(dict(zip(plan.names, row))))
        except (IntegrationError, FloatingPointError) as exc:
            failures += 1
            log.info("GSA sample %d failed: %s", i, exc)
            continue
        for o in outputs:
            Y[o][i] = observables(traj, o, times)
    ok = np.all(np.isfinite(np.column_stack([Y[o] for o in outputs])), axis=1)
    if failures > 0.1 * plan.n:
        raise RuntimeError(f"{failures} of {plan.n} sensitivity samples failed to simulate")
    src = {o: src_coefficients(X[ok], Y[o][ok], plan.names, times) for o in outputs}
    return GsaResult(plan, X, src, failures)
