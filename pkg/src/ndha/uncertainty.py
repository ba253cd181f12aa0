"""Monte-Carlo propagation of parameter uncertainty and prediction-band metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .params import ParameterSet
from .sensitivity import lhs_unit
from .simulate import Experiment, IntegrationError, observables, simulate

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.10
QUANTILES = (2.5, 50.0, 97.5)
ARIL_FLOOR = 0.01


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParameterDistribution:
    """Independent uniform ranges for a set of parameters.

    ``source`` is ``"class"`` (uncertainty-class ranges around a value) or
    ``"calibrated"`` (mean * (1 +/- z * CV)). ``correlation`` enables the
    optional correlated-normal sampling mode.
    """

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    source: str = "class"
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    correlation: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.source not in ("class", "calibrated"):
            raise ValueError(f"unknown distribution source {self.source!r}")
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (len(self.names),) or hi.shape != lo.shape:
            raise ValueError("one range per parameter")
        if np.any(lo <= 0) or np.any(hi < lo):
            raise ValueError("ranges must be positive with upper >= lower")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_classes(cls, params: ParameterSet, names: Sequence[str]) -> "ParameterDistribution":
        r = np.array([params.class_range(n) for n in names])
        return cls(tuple(names), r[:, 0], r[:, 1], "class",
                   mean=np.array([params[n] for n in names]))

    @classmethod
    def from_calibration(cls, means: Mapping[str, float], cv_percent: Mapping[str, float],
                         z: float = 1.96, correlation=None) -> "ParameterDistribution":
        names = tuple(means)
        mu = np.array([means[n] for n in names], dtype=float)
        cv = np.array([cv_percent[n] for n in names], dtype=float) / 100.0
        half = np.minimum(z * cv, 0.999)
        return cls(names, mu * (1 - half), mu * (1 + half), "calibrated",
                   mean=mu, sd=mu * cv, correlation=correlation)

    def sample(self, n: int, seed: int, correlated: bool = False) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if not correlated:
            U = lhs_unit(n, len(self.names), rng)
            return self.lower + U * (self.upper - self.lower)
        if self.correlation is None or self.mean is None or self.sd is None:
            raise ValueError("correlated sampling needs mean, sd and correlation")
        C = np.asarray(self.correlation) * np.outer(self.sd, self.sd)
        L = np.linalg.cholesky(C + 1e-15 * np.eye(len(C)))
        Z = rng.standard_normal((n, len(self.names)))
        return np.clip(self.mean + Z @ L.T, self.lower, self.upper)

    def widened(self, factor: float) -> "ParameterDistribution":
        """Same midpoint, ranges scaled by ``factor`` (lower bound kept positive)."""
        mid = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * factor
        return ParameterDistribution(self.names, np.maximum(mid - half, 1e-12 * mid), mid + half,
                                     self.source, self.mean, self.sd, self.correlation)


@dataclass(frozen=True)
class PredictionBand:
    times: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    n_effective: int
    samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (np.all(self.lower <= self.median + 1e-12) and np.all(self.median <= self.upper + 1e-12)):
            raise ValueError("band quantiles out of order")


def band_from_samples(times, samples: np.ndarray, keep: bool = True) -> PredictionBand:
    lo, med, hi = np.percentile(samples, QUANTILES, axis=0)
    return PredictionBand(np.asarray(times, dtype=float), lo, med, hi, samples.shape[0],
                          samples if keep else None)


@dataclass(frozen=True)
class PropagationResult:
    bands: dict[str, PredictionBand]
    parameter_samples: np.ndarray
    failures: int


def propagate(dist: ParameterDistribution, experiment: Experiment, params: ParameterSet,
              n_samples: int = 500, seed: int = 0, outputs: Sequence[str] = ("DO",),
              times=None, correlated: bool = False) -> PropagationResult:
    """Simulate LHS draws of ``dist`` and take pointwise 2.5/50/97.5 percentiles."""
    if n_samples < 50:
        raise ValueError("need at least 50 samples")
    if times is None:
        times = np.arange(0.0, experiment.horizon + 1e-9, experiment.report_interval)
    times = np.asarray(times, dtype=float)
    X = dist.sample(n_samples, seed, correlated)
    out = {o: np.full((n_samples, len(times)), np.nan) for o in outputs}
    failures = []
    for i, row in enumerate(X):
        try:
            traj = simulate(experiment, params.replace(dict(zip(dist.names, row))))
        except (IntegrationError, FloatingPointError) as exc:
            failures.append((i, str(exc)))
            log.info("propagation sample %d failed: %s", i, exc)
            continue
        for o in outputs:
            out[o][i] = observables(traj, o, times)
    if len(failures) > MAX_FAILURE_FRACTION * n_samples:
        detail = "; ".join(f"#{i}: {m}" for i, m in failures[:5])
        raise PropagationError(f"{len(failures)} of {n_samples} simulations failed ({detail})")
    ok = np.ones(n_samples, dtype=bool)
    ok[[i for i, _ in failures]] = False
    bands = {o: band_from_samples(times, out[o][ok]) for o in outputs}
    return PropagationResult(bands, X, len(failures))


def _aligned(band: PredictionBand, data_times, data_values):
    t = np.asarray(data_times, dtype=float)
    y = np.asarray(data_values, dtype=float)
    lo = np.interp(t, band.times, band.lower)
    hi = np.interp(t, band.times, band.upper)
    return y, lo, hi


def aril(band: PredictionBand, data_times, data_values, floor: float = ARIL_FLOOR):
    """Mean of (upper - lower)/|data| over points with |data| >= floor * max|data|.

    Returns (aril, number of excluded points).
    """
    y, lo, hi = _aligned(band, data_times, data_values)
    keep = np.abs(y) >= floor * np.abs(y).max() if y.size else np.zeros(0, bool)
    keep &= y != 0
    if not keep.any():
        raise ValueError("every data point excluded from ARIL")
    return float(np.mean((hi[keep] - lo[keep]) / np.abs(y[keep]))), int((~keep).sum())


def pci_puci(band: PredictionBand, data_times, data_values, floor: float = ARIL_FLOOR):
    """Coverage fraction and its ratio to ARIL (larger is better)."""
    y, lo, hi = _aligned(band, data_times, data_values)
    pci = float(np.mean((y >= lo) & (y <= hi)))
    a, _ = aril(band, data_times, data_values, floor)
    puci = pci / a if a > 0 else (0.0 if pci == 0 else float("inf"))
    return pci, puci
