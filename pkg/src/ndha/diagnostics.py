"""Residual diagnostics and the sampling-interval study.

Residuals are always ``simulated - observed``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

LILLIEFORS_REPLICATES = 10_000
_MC_CHUNK = 500


@dataclass(frozen=True)
class ResidualSeries:
    times: np.ndarray
    residuals: np.ndarray
    label: str = ""
    sigma: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        r = np.asarray(self.residuals, dtype=float)
        if t.shape != r.shape or r.ndim != 1:
            raise ValueError("times and residuals must be equal-length vectors")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError(f"residual series {self.label!r} has non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "residuals", r)

    def __len__(self):
        return len(self.residuals)


def _values(res) -> np.ndarray:
    return res.residuals if isinstance(res, ResidualSeries) else np.asarray(res, dtype=float)


# -- normality ---------------------------------------------------------------

def lilliefors_statistic(x) -> float:
    """sup |F_n - Phi| with mean and standard deviation estimated from ``x``."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("zero-variance residuals")
    cdf = stats.norm.cdf((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    return float(max((i / n - cdf).max(), (cdf - (i - 1) / n).max()))


def _lilliefors_null(n: int, replicates: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty(replicates)
    i = np.arange(1, n + 1)
    for start in range(0, replicates, _MC_CHUNK):
        m = min(_MC_CHUNK, replicates - start)
        z = np.sort(rng.standard_normal((m, n)), axis=1)
        z = (z - z.mean(axis=1, keepdims=True)) / z.std(axis=1, ddof=1, keepdims=True)
        cdf = stats.norm.cdf(z)
        out[start:start + m] = np.maximum((i / n - cdf).max(axis=1), (cdf - (i - 1) / n).max(axis=1))
    return out


@dataclass(frozen=True)
class NormalityTest:
    statistic: float
    critical: float
    p_value: float
    reject: bool
    alpha: float
    n: int


def ks_normality(res, alpha: float = 0.05, replicates: int = LILLIEFORS_REPLICATES,
                 seed: int = 0) -> NormalityTest:
    """Lilliefors test with a seeded Monte-Carlo null distribution for this exact n."""
    x = _values(res)
    n = len(x)
    if n < 5:
        raise ValueError("normality test needs at least 5 residuals")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    d = lilliefors_statistic(x)
    null = _lilliefors_null(n, replicates, seed)
    crit = float(np.quantile(null, 1 - alpha))
    p = float((1 + np.count_nonzero(null >= d)) / (1 + replicates))
    return NormalityTest(d, crit, p, d > crit, alpha, n)


def qq_summary(res) -> dict:
    """Normal QQ agreement: correlation and worst deviation in standard deviations."""
    x = np.sort(_values(res))
    n = len(x)
    if n < 3 or not x.std(ddof=1) > 0:
        raise ValueError("QQ summary needs at least 3 non-constant residuals")
    theo = stats.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    z = (x - x.mean()) / x.std(ddof=1)
    tail = max(1, n // 20)
    return {
        "qq_correlation": float(np.corrcoef(theo, z)[0, 1]),
        "max_abs_deviation_sd": float(np.abs(z - theo).max()),
        "tail_deviation_sd": float(np.abs(np.r_[z[:tail] - theo[:tail], z[-tail:] - theo[-tail:]]).mean()),
    }


# -- autocorrelation ---------------------------------------------------------

@dataclass(frozen=True)
class Autocorrelation:
    lags: np.ndarray
    values: np.ndarray
    band: float

    def fraction_inside(self) -> float:
        """Share of nonzero lags whose |ACF| lies within the 95% band."""
        v = np.abs(self.values[1:])
        return float(np.mean(v <= self.band)) if len(v) else 1.0


def acf(res, max_lag: int) -> Autocorrelation:
    """Biased (1/n) autocorrelation of the mean-removed series, lags 0..max_lag."""
    x = _values(res)
    n = len(x)
    if not 0 <= max_lag < n / 2:
        raise ValueError(f"max_lag must satisfy 0 <= max_lag < n/2 (n={n})")
    d = x - x.mean()
    c0 = float(d @ d) / n
    if c0 == 0:
        vals = np.r_[1.0, np.zeros(max_lag)]
    else:
        vals = np.array([float(d[:n - k] @ d[k:]) / n / c0 for k in range(max_lag + 1)])
    return Autocorrelation(np.arange(max_lag + 1), vals, 1.96 / math.sqrt(n))


# -- agreement statistics -----------------------------------------------------

@dataclass(frozen=True)
class UnitLineTest:
    statistic: float
    critical: float
    passed: bool
    intercept: float
    slope: float

    def format(self) -> str:
        """Compact '1 (F/crit)' style: pass flag, then statistic versus critical value."""
        return f"{int(self.passed)} ({self.statistic:.2g}/{self.critical:.2g})"


def f_test_unit_line(obs, sim, alpha: float = 0.05) -> UnitLineTest:
    """Joint F-test of intercept 0 and slope 1 when regressing obs on sim."""
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    n = len(obs)
    if n < 3 or sim.shape != obs.shape:
        raise ValueError("need at least 3 paired points")
    if not sim.std() > 0:
        raise ValueError("simulated values have zero variance")
    slope, intercept = np.polyfit(sim, obs, 1)
    sse_free = float(((obs - intercept - slope * sim) ** 2).sum())
    sse_null = float(((obs - sim) ** 2).sum())
    crit = float(stats.f.ppf(1 - alpha, 2, n - 2))
    if sse_null == 0:
        F = 0.0
    elif sse_free <= 1e-300:
        F = math.inf
    else:
        F = max(0.0, ((sse_null - sse_free) / 2) / (sse_free / (n - 2)))
    return UnitLineTest(F, crit, F <= crit, float(intercept), float(slope))


@dataclass(frozen=True)
class Msep:
    msep: float
    me: float     # mean (bias) fraction
    se: float     # slope fraction
    nc: float     # random fraction


def msep_decomposition(obs, sim) -> Msep:
    """Theil partition of the mean squared prediction error into bias, slope and random parts."""
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if len(obs) < 2 or sim.shape != obs.shape:
        raise ValueError("need at least 2 paired points")
    msep = float(np.mean((sim - obs) ** 2))
    if msep == 0:
        return Msep(0.0, math.nan, math.nan, math.nan)
    so, ss = obs.std(), sim.std()
    r = float(np.corrcoef(obs, sim)[0, 1]) if so > 0 and ss > 0 else 0.0
    me = (sim.mean() - obs.mean()) ** 2 / msep
    se = (ss - r * so) ** 2 / msep
    return Msep(msep, float(me), float(se), float(1.0 - me - se))


def rmse(res) -> float:
    x = _values(res)
    return float(math.sqrt(np.mean(x ** 2)))


def r2(obs, sim) -> float:
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    sst = float(((obs - obs.mean()) ** 2).sum())
    if sst == 0:
        raise ValueError("observations have zero variance")
    return 1.0 - float(((obs - sim) ** 2).sum()) / sst


def janus(cal_residuals, val_residuals) -> float:
    """sqrt(MSE_validation / MSE_calibration)."""
    cal = _values(cal_residuals)
    val = _values(val_residuals)
    if not len(cal) or not len(val):
        raise ValueError("both residual sets must be nonempty")
    mse_cal = float(np.mean(cal ** 2))
    if mse_cal == 0:
        raise ValueError("calibration MSE is zero")
    return math.sqrt(float(np.mean(val ** 2)) / mse_cal)


# -- per-experiment report -----------------------------------------------------

def residual_series(experiments, params, rtol: float = 1e-6,
                    atol: float = 1e-9) -> list[tuple[str, str, np.ndarray, np.ndarray, ResidualSeries]]:
    """(experiment label, series name, obs, sim, residuals) for every measured series."""
    from .simulate import observables, simulate
    out = []
    for exp in experiments:
        traj = simulate(exp, params, rtol, atol)
        for s in exp.series:
            y = observables(traj, s.name, s.times)
            out.append((exp.label, s.name, s.values, y,
                        ResidualSeries(s.times, y - s.values, f"{exp.label}:{s.name}", s.sigma)))
    return out


def _summary(obs, sim, res: ResidualSeries, alpha, seed, replicates) -> dict:
    row = {"n": len(obs), "rmse": rmse(res)}
    try:
        row["r2"] = r2(obs, sim)
    except ValueError:
        row["r2"] = math.nan
    m = msep_decomposition(obs, sim)
    row.update(msep=m.msep, ME=m.me, SE=m.se, NC=m.nc)
    try:
        f = f_test_unit_line(obs, sim, alpha)
        row.update(f_test=f.format(), f_pass=f.passed)
    except ValueError as exc:
        row.update(f_test=f"n/a ({exc})", f_pass=None)
    try:
        k = ks_normality(res, alpha, replicates, seed)
        row.update(ks_statistic=k.statistic, ks_critical=k.critical, normal_rejected=k.reject)
        row.update(qq_summary(res))
    except ValueError as exc:
        row.update(ks_statistic=math.nan, ks_critical=math.nan, normal_rejected=None, ks_note=str(exc))
    if len(res) >= 4:
        a = acf(res, min(20, (len(res) - 1) // 2))
        row.update(acf_lag1=float(a.values[1]), acf_inside_band=a.fraction_inside())
    return row


def diagnostics_report(experiments, params, alpha: float = 0.05, seed: int = 0,
                       replicates: int = LILLIEFORS_REPLICATES, rtol: float = 1e-6,
                       atol: float = 1e-9) -> dict:
    """Per-series and pooled agreement statistics for a set of experiments."""
    rows, obs_all, sim_all, res_all = {}, [], [], []
    for label, name, obs, sim, res in residual_series(experiments, params, rtol, atol):
        rows[f"{label}:{name}"] = _summary(obs, sim, res, alpha, seed, replicates)
        obs_all.append(obs)
        sim_all.append(sim)
        res_all.append(res.residuals)
    if rows:
        o, s, r = map(np.concatenate, (obs_all, sim_all, res_all))
        rows["combined"] = _summary(o, s, ResidualSeries(np.arange(len(r), dtype=float), r, "combined"),
                                    alpha, seed, replicates)
    return rows


# -- sampling-interval study ---------------------------------------------------

def decimate(experiment, interval: float):
    """Keep every k-th sample of each series, k = interval / native spacing."""
    from .simulate import MeasuredSeries
    out = []
    for s in experiment.series:
        if len(s) < 2:
            raise ValueError(f"series {s.name} too short to decimate")
        native = float(np.median(np.diff(s.times)))
        k = interval / native
        if k < 1 - 1e-9 or abs(k - round(k)) > 1e-6:
            raise ValueError(f"interval {interval} min is not a multiple of the native {native:g} min")
        step = int(round(k))
        out.append(MeasuredSeries(s.name, s.times[::step], s.values[::step], s.sigma))
    if sum(len(s) for s in out) < 10:
        raise ValueError(f"decimation to {interval} min leaves fewer than 10 points")
    return experiment.with_series(out)


@dataclass(frozen=True)
class SubsampleRow:
    interval: float
    n_points: int
    values: dict
    cv: dict
    acf_lag1: float
    f_test: str
    j_opt: float


def subsample_study(problem, intervals: Sequence[float], start: Mapping[str, float] | None = None,
                    alpha: float = 0.05, **fit_kw) -> list[SubsampleRow]:
    """Refit the problem at each sampling interval and tabulate estimates and CVs.

    Refits default to local polishes from ``start`` (or the base values) so
    every interval is searched the same way.
    """
    from .estimation import CalibrationProblem, fit
    start = dict(start or {c: problem.base[c] for c in problem.candidates})
    fit_kw = {"n_global": 0, "n_polish": 3, "polish_radius": 0.02, **fit_kw}
    rows = []
    for interval in intervals:
        exps = tuple(decimate(e, interval) for e in problem.experiments)
        sub = CalibrationProblem(exps, problem.candidates, problem.base, problem.bounds,
                                 problem.rtol, problem.atol, problem.fd_rtol, problem.fd_atol)
        r = fit(sub, start=start, **fit_kw)
        pooled = residual_series(exps, r.params(sub), sub.rtol, sub.atol)
        res = np.concatenate([p[4].residuals for p in pooled])
        obs = np.concatenate([p[2] for p in pooled])
        sim = np.concatenate([p[3] for p in pooled])
        lag1 = float(acf(res, 1).values[1]) if len(res) >= 3 else math.nan
        rows.append(SubsampleRow(float(interval), sub.n_points, r.values, r.cv, lag1,
                                 f_test_unit_line(obs, sim, alpha).format(), r.j_opt))
    return rows
