"""Pulse-driven batch integration, observables and N2O pathway accounting.

Experiment time is in minutes; rates inside the model are per day, so the
right-hand side is scaled by 1/1440. Pulses are instantaneous jumps of one
component followed by an integrator restart. The stored state at a pulse time
is the post-pulse state.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import ODEintWarning, odeint

from . import _kernels as K
from .model import COMPONENT_INDEX, COMPONENTS, N_PROCESSES, Environment, Kernel
from .params import ParameterSet

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440.0
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-9
REPORT_INTERVAL_MIN = 0.5

PULSE_SPECIES = frozenset({"S_TAN", "S_NH2OH", "S_TNO2", "S_NO3", "S_N2O", "S_S"})
OBSERVABLE_COMPONENT = {
    "DO": "S_O2", "N2O": "S_N2O", "TAN": "S_TAN", "TNO2": "S_TNO2",
    "NH2OH": "S_NH2OH", "NO": "S_NO", "NO3": "S_NO3",
}

# rows used while preconditioning: aerobic heterotrophic growth, lysis, hydrolysis
PRECONDITION_ROWS = (6, 11, 12, 13, 14, 15, 16)


class IntegrationError(RuntimeError):
    """Solver failure or a negative-state guard violation."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


@dataclass(frozen=True)
class Pulse:
    time: float
    species: str
    delta: float

    def __post_init__(self):
        if self.species not in PULSE_SPECIES:
            raise ValueError(f"pulse species {self.species!r} not one of {sorted(PULSE_SPECIES)}")
        if not self.delta > 0:
            raise ValueError(f"pulse delta must be > 0, got {self.delta}")
        if self.time < 0:
            raise ValueError(f"pulse time must be >= 0, got {self.time}")


@dataclass(frozen=True)
class MeasuredSeries:
    """One measured observable of an experiment."""

    name: str
    times: np.ndarray
    values: np.ndarray
    sigma: float

    def __post_init__(self):
        if self.name not in OBSERVABLE_COMPONENT:
            raise ValueError(f"unknown observable {self.name!r}")
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError(f"series {self.name}: times and values must be equal-length vectors")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(t)):
            raise ValueError(f"series {self.name}: non-finite entries")
        if not self.sigma > 0:
            raise ValueError(f"series {self.name}: sigma must be > 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.times)

    def subset(self, mask) -> "MeasuredSeries":
        return MeasuredSeries(self.name, self.times[mask], self.values[mask], self.sigma)


@dataclass(frozen=True)
class Experiment:
    label: str
    environment: Environment
    initial: np.ndarray
    pulses: tuple[Pulse, ...] = ()
    horizon: float = 60.0
    series: tuple[MeasuredSeries, ...] = ()
    report_interval: float = REPORT_INTERVAL_MIN

    def __post_init__(self):
        y0 = np.asarray(self.initial, dtype=float)
        if y0.shape != (len(COMPONENTS),):
            raise ValueError(f"{self.label}: initial state needs {len(COMPONENTS)} entries")
        if np.any(y0 < 0) or not np.all(np.isfinite(y0)):
            raise ValueError(f"{self.label}: initial state must be finite and nonnegative")
        if not self.horizon > 0:
            raise ValueError(f"{self.label}: horizon must be > 0")
        if not self.report_interval > 0:
            raise ValueError(f"{self.label}: report interval must be > 0")
        for p in self.pulses:
            if p.time > self.horizon:
                raise ValueError(f"{self.label}: pulse at {p.time} min beyond horizon {self.horizon}")
        for s in self.series:
            if len(s) and (s.times.min() < 0 or s.times.max() > self.horizon):
                raise ValueError(f"{self.label}: series {s.name} has times outside [0, {self.horizon}]")
        object.__setattr__(self, "initial", y0)
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.time)))
        object.__setattr__(self, "series", tuple(self.series))

    def with_series(self, series) -> "Experiment":
        return Experiment(self.label, self.environment, self.initial, self.pulses,
                          self.horizon, tuple(series), self.report_interval)

    def with_initial(self, initial) -> "Experiment":
        return Experiment(self.label, self.environment, initial, self.pulses,
                          self.horizon, self.series, self.report_interval)

    def n_points(self) -> int:
        return sum(len(s) for s in self.series)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray          # min
    states: np.ndarray         # (m, 15)
    rates: np.ndarray          # (m, 20), per day
    params: ParameterSet = field(repr=False)
    label: str = ""

    def component(self, name: str) -> np.ndarray:
        return self.states[:, COMPONENT_INDEX[name]]


def _grid(experiment: Experiment, report_interval: float | None) -> np.ndarray:
    dt = report_interval or experiment.report_interval
    n = int(np.floor(experiment.horizon / dt + 1e-9))
    pts = [np.arange(n + 1) * dt, [experiment.horizon], [p.time for p in experiment.pulses]]
    pts += [s.times for s in experiment.series]
    return np.unique(np.concatenate(pts))


# S_IC is a signed carbon balance that no rate law reads; it is exempt.
_GUARDED = np.array([c != "S_IC" for c in COMPONENTS])
# LSODA's global error near zero reaches a few atol where a substrate runs out.
GUARD_FACTOR = 10.0


def _guard(y: np.ndarray, t: float, atol: float) -> np.ndarray:
    g = y[_GUARDED]
    low = g.min()
    if low < 0:
        if low < -GUARD_FACTOR * atol:
            j = int(np.flatnonzero(_GUARDED)[np.argmin(g)])
            raise IntegrationError(
                f"negative state {COMPONENTS[j]}={low:.3e} at t={t:.4g} min exceeds tolerance {GUARD_FACTOR * atol:.1e}",
                t, y.copy())
        y = np.where(_GUARDED, np.maximum(y, 0.0), y)
    return y


def integrate(y0, times, kernel: Kernel, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
              scale=1.0 / MINUTES_PER_DAY, mxstep=20000) -> np.ndarray:
    """Integrate one pulse-free segment; ``times[0]`` is the start."""
    times = np.asarray(times, dtype=float)
    if len(times) == 1:
        return np.asarray(y0, dtype=float)[None, :].copy()
    # failures surface as IntegrationError below; the solver's own warning is redundant
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", ODEintWarning)
        Y, info = odeint(K.rhs, np.asarray(y0, dtype=float), times, args=kernel.args(scale),
                         Dfun=K.jac, rtol=rtol, atol=atol, full_output=True, mxstep=mxstep)
    if info["message"] != "Integration successful." or not np.all(np.isfinite(Y)):
        t_fail = float(info["tcur"][-1]) if len(info["tcur"]) else float(times[0])
        raise IntegrationError(f"solver failed near t={t_fail:.4g}: {info['message']}", t_fail, Y[-1])
    for i in range(1, len(Y)):
        Y[i] = _guard(Y[i], times[i], atol)
    return Y


def simulate(experiment: Experiment, params: ParameterSet, rtol: float = DEFAULT_RTOL,
             atol: float = DEFAULT_ATOL, report_interval: float | None = None,
             active=None, frozen: tuple[str, ...] = ()) -> Trajectory:
    """Integrate ``experiment`` over its horizon, applying pulses in order."""
    kernel = Kernel.build(params, experiment.environment, active, frozen)
    grid = _grid(experiment, report_interval)
    pulse_times = sorted({p.time for p in experiment.pulses})
    bounds = [0.0] + [t for t in pulse_times if 0 < t < experiment.horizon] + [experiment.horizon]

    y = experiment.initial.copy()
    _apply_pulses(y, experiment, 0.0)
    pieces = []
    for k in range(len(bounds) - 1):
        a, b = bounds[k], bounds[k + 1]
        seg = grid[(grid >= a) & (grid <= b)]
        Y = integrate(y, seg, kernel, rtol, atol)
        if k + 1 < len(bounds) - 1:
            y = Y[-1].copy()
            _apply_pulses(y, experiment, b)
            Y = Y[:-1]
        pieces.append(Y)
    states = np.vstack(pieces)
    rates = K.rates_along(states, kernel.p, kernel.env) * kernel.active
    return Trajectory(grid, states, rates, params, experiment.label)


def _apply_pulses(y: np.ndarray, experiment: Experiment, t: float) -> None:
    for p in experiment.pulses:
        if p.time == t:
            y[COMPONENT_INDEX[p.species]] += p.delta


def precondition_biomass(initial, params: ParameterSet, env: Environment, duration: float,
                         rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """State after ``duration`` min of decay, hydrolysis and aerobic regrowth at clamped DO."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    y0 = np.asarray(initial, dtype=float).copy()
    if duration == 0:
        return y0
    active = np.zeros(N_PROCESSES)
    active[list(PRECONDITION_ROWS)] = 1.0
    kernel = Kernel.build(params, env, active, frozen=("S_O2",))
    return integrate(y0, [0.0, duration], kernel, rtol, atol)[-1]


def observables(trajectory: Trajectory, name: str, times=None) -> np.ndarray:
    """Linear interpolation of one observable onto ``times`` (grid if omitted)."""
    if name in OBSERVABLE_COMPONENT:
        col = trajectory.component(OBSERVABLE_COMPONENT[name])
    elif name in COMPONENT_INDEX:
        col = trajectory.component(name)
    else:
        raise KeyError(f"unknown observable {name!r}")
    if times is None:
        return col.copy()
    t = np.asarray(times, dtype=float)
    lo, hi = trajectory.times[0], trajectory.times[-1]
    if t.size and (t.min() < lo - 1e-9 or t.max() > hi + 1e-9):
        raise ValueError(f"requested times outside [{lo}, {hi}] min")
    return np.interp(t, trajectory.times, col)


@dataclass(frozen=True)
class PathwayFluxes:
    """Cumulative N2O-N (mgN/L) attributed to each pathway."""

    nn: float
    nd: float
    hd: float

    @property
    def total(self) -> float:
        return self.nn + self.nd + max(self.hd, 0.0)

    def shares(self) -> dict[str, float] | None:
        """Pathway fractions of gross production; heterotrophic net consumption counts as 0."""
        tot = self.total
        if tot <= 0:
            return None
        return {"NN": self.nn / tot, "ND": self.nd / tot, "HD": max(self.hd, 0.0) / tot}


def pathway_rates(rates: np.ndarray, params: ParameterSet) -> np.ndarray:
    """Instantaneous (m, 3) NN, ND, HD N2O fluxes in mgN/L/d from stored process rates."""
    R = np.atleast_2d(rates)
    ya, yh = params["Y_AOB"], params["Y_HB"]
    nu = (1 - yh) / (0.57 * yh)
    n2o_aut = 3.0 * R[:, 4]
    no_nn = R[:, 1] / ya
    no_nd = 4.0 * R[:, 3]
    den = no_nn + no_nd
    with np.errstate(invalid="ignore", divide="ignore"):
        f_nn = np.where(den > 0, no_nn / np.where(den > 0, den, 1.0), 0.5)
    return np.column_stack([n2o_aut * f_nn, n2o_aut * (1 - f_nn), nu * (R[:, 9] - R[:, 10])])


def pathway_fluxes(trajectory: Trajectory, t_start: float | None = None,
                   t_end: float | None = None) -> PathwayFluxes:
    """Trapezoid integration of pathway fluxes over stored grid points in [t_start, t_end]."""
    t = trajectory.times
    mask = np.ones(len(t), dtype=bool)
    if t_start is not None:
        mask &= t >= t_start
    if t_end is not None:
        mask &= t <= t_end
    if mask.sum() < 2:
        return PathwayFluxes(0.0, 0.0, 0.0)
    F = pathway_rates(trajectory.rates[mask], trajectory.params)
    cum = np.trapezoid(F, t[mask], axis=0) / MINUTES_PER_DAY
    return PathwayFluxes(*map(float, cum))
