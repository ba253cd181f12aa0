"""Weighted least-squares calibration, identifiability and subset selection.

The objective averages squared sigma-scaled residuals within each experiment
and sums over experiments. Searches run in log-parameter space normalized to
the bounds: a Latin-hypercube scatter stage followed by compass pattern-search
polishes.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .params import FRACTIONS, PARAM_INDEX, ParameterSet
from .sensitivity import lhs_unit
from .simulate import Experiment, IntegrationError, observables, simulate

log = logging.getLogger(__name__)

FAIL_PENALTY = 1e12
GAMMA_IDENTIFIABLE = 15.0
MAX_CV_IDENTIFIABLE = 5.0       # percent
FD_STEP = 1e-4


@dataclass(frozen=True)
class CalibrationProblem:
    experiments: tuple[Experiment, ...]
    candidates: tuple[str, ...]
    base: ParameterSet
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    rtol: float = 1e-6
    atol: float = 1e-9
    fd_rtol: float = 1e-9
    fd_atol: float = 1e-12

    def __post_init__(self):
        if not self.experiments:
            raise ValueError("calibration problem needs at least one experiment")
        if not self.candidates:
            raise ValueError("calibration problem needs at least one candidate")
        unknown = [c for c in self.candidates if c not in PARAM_INDEX]
        if unknown:
            raise KeyError(f"unknown candidate parameter(s): {unknown}")
        b = {c: tuple(self.bounds.get(c, default_bounds(self.base[c], c))) for c in self.candidates}
        for c, (lo, hi) in b.items():
            if not 0 < lo < hi:
                raise ValueError(f"bounds for {c} must satisfy 0 < lower < upper")
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "bounds", b)

    @property
    def n_points(self) -> int:
        return sum(e.n_points() for e in self.experiments)

    def with_candidates(self, names: Sequence[str]) -> "CalibrationProblem":
        return CalibrationProblem(self.experiments, tuple(names), self.base,
                                  {n: self.bounds[n] for n in names if n in self.bounds},
                                  self.rtol, self.atol, self.fd_rtol, self.fd_atol)

    def with_base(self, base: ParameterSet) -> "CalibrationProblem":
        return CalibrationProblem(self.experiments, self.candidates, base, self.bounds,
                                  self.rtol, self.atol, self.fd_rtol, self.fd_atol)

    def params_at(self, values: Mapping[str, float] | Sequence[float]) -> ParameterSet:
        if not isinstance(values, Mapping):
            values = dict(zip(self.candidates, values))
        return self.base.replace(values)


def default_bounds(value: float, name: str | None = None) -> tuple[float, float]:
    """Two decades either side of the current value; fractions stay at or below 1."""
    hi = value * 100.0
    if name in FRACTIONS:
        hi = min(hi, 1.0)
    return value / 100.0, hi


def predictions(problem: CalibrationProblem, params: ParameterSet, rtol=None, atol=None):
    """Simulated values at every measured point, as one list per experiment series."""
    out = []
    for exp in problem.experiments:
        traj = simulate(exp, params, rtol or problem.rtol, atol or problem.atol)
        out.append([observables(traj, s.name, s.times) for s in exp.series])
    return out


def scaled_residuals(problem: CalibrationProblem, params: ParameterSet) -> np.ndarray:
    """Residual vector r with J = sum(r^2): (sim - obs) / sigma / sqrt(n_experiment)."""
    parts = []
    for exp, sims in zip(problem.experiments, predictions(problem, params)):
        n = exp.n_points()
        for s, y in zip(exp.series, sims):
            parts.append((y - s.values) / s.sigma / math.sqrt(n))
    return np.concatenate(parts) if parts else np.zeros(0)


def weighted_sse(problem: CalibrationProblem, params: ParameterSet) -> float:
    """Sum of squared sigma-scaled residuals without per-experiment averaging."""
    sse = 0.0
    for exp, sims in zip(problem.experiments, predictions(problem, params)):
        for s, y in zip(exp.series, sims):
            sse += float((((y - s.values) / s.sigma) ** 2).sum())
    return sse


def objective(values, problem: CalibrationProblem) -> float:
    """J for a candidate assignment; simulation failure returns a finite penalty."""
    try:
        r = scaled_residuals(problem, problem.params_at(values))
    except (IntegrationError, FloatingPointError) as exc:
        log.debug("objective penalty at %s: %s", values, exc)
        return FAIL_PENALTY
    j = float(r @ r)
    return j if math.isfinite(j) else FAIL_PENALTY


class _Scaled:
    """Map between parameter values and the unit box in log space."""

    def __init__(self, problem: CalibrationProblem):
        self.lo = np.log([problem.bounds[c][0] for c in problem.candidates])
        self.hi = np.log([problem.bounds[c][1] for c in problem.candidates])

    def to_values(self, u):
        return np.exp(self.lo + np.asarray(u) * (self.hi - self.lo))

    def to_unit(self, v):
        return (np.log(v) - self.lo) / (self.hi - self.lo)


def pattern_search(f, u0, mesh=0.1, shrink=0.5, min_mesh=1e-6, max_evals=20000):
    """Compass search on the unit box. Returns (u, f(u), evaluations).

    The last successful direction is polled first, and two successes in a row
    along it double the mesh (never beyond its starting size).
    """
    u = np.clip(np.asarray(u0, dtype=float), 0.0, 1.0)
    fu = f(u)
    evals = 1
    p = len(u)
    directions = list(np.vstack([np.eye(p), -np.eye(p)]))
    max_mesh = mesh
    streak = 0
    while mesh >= min_mesh and evals < max_evals:
        improved = False
        for k, d in enumerate(directions):
            trial = np.clip(u + mesh * d, 0.0, 1.0)
            if np.array_equal(trial, u):
                continue
            ft = f(trial)
            evals += 1
            if ft < fu:
                u, fu, improved = trial, ft, True
                streak = streak + 1 if k == 0 else 1
                directions.insert(0, directions.pop(k))
                break
        if not improved:
            mesh *= shrink
            streak = 0
        elif streak >= 2:
            mesh = min(2.0 * mesh, max_mesh)
            streak = 0
    return u, fu, evals


@dataclass(frozen=True)
class FitResult:
    names: tuple[str, ...]
    values: dict
    j_opt: float
    n_points: int
    fim: np.ndarray
    covariance: np.ndarray | None
    cv: dict
    correlation: np.ndarray | None
    gamma: float
    aic: float
    log_rde: float
    inv_mode: float
    beale_j_crit: float
    evaluations: int = 0
    condition_number: float = float("nan")

    @property
    def identifiable(self) -> bool:
        return self.gamma < GAMMA_IDENTIFIABLE

    def admissible(self, max_cv: float = MAX_CV_IDENTIFIABLE) -> bool:
        """Identifiable and every estimate precise to ``max_cv`` percent."""
        return self.identifiable and all(math.isfinite(v) and v < max_cv for v in self.cv.values())

    def params(self, problem: CalibrationProblem) -> ParameterSet:
        return problem.base.replace(self.values)


def fit(problem: CalibrationProblem, n_global: int = 200, n_polish: int = 10, seed: int = 0,
        polish_radius: float = 0.1, mesh: float = 0.1, min_mesh: float = 1e-6,
        start: Mapping[str, float] | None = None) -> FitResult:
    """Scatter search over the bounds, then pattern-search polishes from the best points."""
    sc = _Scaled(problem)
    cache: dict[bytes, float] = {}

    def f(u):
        key = np.round(u, 12).tobytes()
        if key not in cache:
            cache[key] = objective(sc.to_values(u), problem)
        return cache[key]

    rng = np.random.default_rng(seed)
    p = len(problem.candidates)
    starts = lhs_unit(n_global, p, rng) if n_global else np.zeros((0, p))
    if start is not None:
        starts = np.vstack([starts, sc.to_unit([start[c] for c in problem.candidates])])
    scores = np.array([f(u) for u in starts])
    if not len(scores) or np.all(scores >= FAIL_PENALTY):
        raise RuntimeError("every global start failed to simulate")
    order = np.argsort(scores, kind="stable")

    best_u, best_j = starts[order[0]], scores[order[0]]
    for k in range(n_polish):
        if k < min(3, len(order)):
            u0 = starts[order[k]]
        else:
            u0 = np.clip(best_u + rng.uniform(-polish_radius, polish_radius, p), 0.0, 1.0)
        u, j, _ = pattern_search(f, u0, mesh=mesh, min_mesh=min_mesh)
        if j < best_j:
            best_u, best_j = u, j
    values = dict(zip(problem.candidates, sc.to_values(best_u).tolist()))
    return identifiability(problem, values, best_j, evaluations=len(cache))


def sensitivities(problem: CalibrationProblem, values: Mapping[str, float],
                  step: float = FD_STEP) -> np.ndarray:
    """Central-difference d(sim)/d(theta) at every measured point, sigma-scaled: (N, p)."""
    names = list(values)
    sig = np.concatenate([np.full(len(s), s.sigma) for e in problem.experiments for s in e.series])
    cols = []
    for n in names:
        h = step * values[n]
        up = problem.base.replace({**values, n: values[n] + h})
        dn = problem.base.replace({**values, n: values[n] - h})
        yu = _flat(predictions(problem, up, problem.fd_rtol, problem.fd_atol))
        yd = _flat(predictions(problem, dn, problem.fd_rtol, problem.fd_atol))
        cols.append((yu - yd) / (2 * h) / sig)
    return np.column_stack(cols)


def _flat(preds):
    return np.concatenate([y for sims in preds for y in sims])


def fim(problem: CalibrationProblem, values: Mapping[str, float], step: float = FD_STEP):
    """Fisher information, covariance (None when singular) and the sensitivity matrix."""
    S = sensitivities(problem, values, step)
    F = S.T @ S
    cond = np.linalg.cond(F)
    cov = None
    if np.isfinite(cond) and cond < 1e14:
        cov = np.linalg.inv(F)
        cov = 0.5 * (cov + cov.T)
    else:
        log.warning("FIM singular (condition number %.3g); covariance not computed", cond)
    return F, cov, S, cond


def collinearity_index(S: np.ndarray) -> float:
    """1/sqrt(smallest eigenvalue) of the Gram matrix of unit-norm sensitivity columns."""
    norms = np.linalg.norm(S, axis=0)
    if np.any(norms == 0):
        return float("inf")
    Sn = S / norms
    lam = np.linalg.eigvalsh(Sn.T @ Sn).min()
    return float("inf") if lam <= 0 else 1.0 / math.sqrt(lam)


def aic(sse: float, n: int, p: int) -> float:
    return n * math.log(sse / n) + 2 * p if sse > 0 else -math.inf


def beale_region(j_opt: float, p: int, n_data: int, alpha: float = 0.05) -> float:
    """Objective threshold of the approximate joint confidence region."""
    if not 0 < p < n_data:
        raise ValueError("need 0 < p < number of data points")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return j_opt * (1 + p / (n_data - p) * stats.f.ppf(1 - alpha, p, n_data - p))


def beale_grid(problem: CalibrationProblem, result: FitResult, span: float = 3.0,
               points: int = 21, alpha: float = 0.05):
    """Grid points of a 2-parameter subset inside the region J <= J_crit.

    The grid spans +/- ``span`` standard errors around the best fit (or +/- 10 %
    when no covariance is available). Returns (grid values (k, 2), J, inside mask).
    """
    if len(result.names) != 2:
        raise ValueError("region grids are drawn for 2-parameter subsets")
    v = np.array([result.values[n] for n in result.names])
    if result.covariance is not None:
        half = span * np.sqrt(np.diag(result.covariance))
    else:
        half = 0.1 * v
    axes = [np.linspace(max(v[i] - half[i], 1e-12 * v[i]), v[i] + half[i], points) for i in range(2)]
    G = np.array(list(itertools.product(*axes)))
    J = np.array([objective(dict(zip(result.names, g)), problem) for g in G])
    return G, J, J <= result.beale_j_crit


def identifiability(problem: CalibrationProblem, values: Mapping[str, float], j_opt: float,
                    evaluations: int = 0, alpha: float = 0.05) -> FitResult:
    """Full FIM-based identifiability block at a given best fit."""
    names = tuple(values)
    p = len(names)
    F, cov, S, cond = fim(problem, values)
    theta = np.array([values[n] for n in names])
    if cov is not None:
        sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        cv = dict(zip(names, (sd / np.abs(theta) * 100).tolist()))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = cov / np.outer(sd, sd)
        corr = np.clip(corr, -1.0, 1.0)
    else:
        cv = {n: float("inf") for n in names}
        corr = None
    lam = np.linalg.eigvalsh(F)
    inv_mode = float(lam.min() / lam.max()) if lam.max() > 0 else 0.0
    det = float(np.prod(np.clip(lam, 0, None)))
    log_rde = math.log(det ** (1 / (2 * p)) / j_opt) if det > 0 and j_opt > 0 else float("nan")
    n = problem.n_points
    sse = weighted_sse(problem, problem.params_at(values))
    return FitResult(
        names=names, values=dict(values), j_opt=float(j_opt), n_points=n, fim=F,
        covariance=cov, cv=cv, correlation=corr, gamma=collinearity_index(S),
        aic=aic(sse, n, p), log_rde=log_rde, inv_mode=inv_mode,
        beale_j_crit=beale_region(j_opt, p, n, alpha) if n > p else float("nan"),
        evaluations=evaluations, condition_number=float(cond))


@dataclass(frozen=True)
class SubsetRow:
    size: int
    names: tuple[str, ...]
    result: FitResult | None
    error: str | None = None


@dataclass(frozen=True)
class SubsetTable:
    rows: tuple[SubsetRow, ...]
    winner: SubsetRow | None
    stopped_at: int

    def by_size(self, k: int) -> list[SubsetRow]:
        return sorted((r for r in self.rows if r.size == k and r.result is not None),
                      key=lambda r: (r.result.aic, r.names))


def subset_search(problem: CalibrationProblem, max_size: int | None = None,
                  max_cv: float = MAX_CV_IDENTIFIABLE, **fit_kw) -> SubsetTable:
    """Fit every subset, growing the size while the best admissible AIC keeps improving.

    Admissible subsets have a collinearity index below the identifiability
    limit and every CV below ``max_cv`` percent; only they may win or extend
    the search.
    """
    cands = sorted(problem.candidates)
    max_size = min(max_size or len(cands), len(cands))
    rows: list[SubsetRow] = []
    best: SubsetRow | None = None
    stopped = 0
    for k in range(1, max_size + 1):
        level = []
        for combo in itertools.combinations(cands, k):
            try:
                res = fit(problem.with_candidates(combo), **fit_kw)
                level.append(SubsetRow(k, combo, res))
            except (RuntimeError, np.linalg.LinAlgError) as exc:
                level.append(SubsetRow(k, combo, None, str(exc)))
        rows.extend(level)
        stopped = k
        ok = [r for r in level if r.result is not None and r.result.admissible(max_cv)]
        if not ok:
            break
        top = min(ok, key=lambda r: (r.result.aic, r.names))
        if best is not None and top.result.aic >= best.result.aic:
            break
        best = top
    return SubsetTable(tuple(rows), best, stopped)
