"""Pseudo-steady-state scenarios at clamped DO, nitrite and ammonia.

DO, total nitrite and total ammonia have their derivatives zeroed, so their
levels stay exactly at the requested values; the reaction flux each clamp
absorbs is reported as the implied supply. The particulate pools are held at
the scenario's biomass state and N2O/NO are stripped, so every remaining
soluble species settles to a true steady state.

The emission factor is the net biological N2O-N production divided by the
NH4+-N removal (the implied ammonia feed), both integrated over the trailing
10 % of the horizon.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import COMPONENT_INDEX, Environment, Kernel, make_state
from .params import ParameterSet
from .simulate import (
    MINUTES_PER_DAY, IntegrationError, Trajectory, integrate, pathway_fluxes,
)
from . import _kernels as K

log = logging.getLogger(__name__)

CLAMPED = ("S_O2", "S_TNO2", "S_TAN")
HELD = ("X_AOB", "X_NOB", "X_HB", "X_S", "X_I")
REACTION_ROWS = 17
TRAILING_FRACTION = 0.10
STEADY_TOL = 1e-4
FIRST_HORIZON_MIN = 360.0
MAX_HORIZON_MIN = 10 * MINUTES_PER_DAY
POINTS_PER_HORIZON = 400

# AOB-enriched sludge, 0.3 gVSS/L at 1.42 gCOD/gVSS
DEFAULT_BIOMASS = {"X_AOB": 255.6, "X_NOB": 8.52, "X_HB": 42.6, "X_S": 20.0, "X_I": 99.28}

GRID_DO = (0.1, 0.3, 0.5, 1.0, 2.0, 3.5, 5.0)
GRID_TNO2 = (0.0, 1.0, 4.0, 10.0, 20.0, 90.0, 340.0)


@dataclass(frozen=True)
class ScenarioSpec:
    do: float
    tno2: float
    tan: float = 70.0
    pH: float = 7.5
    temperature: float = 20.0
    biomass: dict = field(default_factory=lambda: dict(DEFAULT_BIOMASS))
    max_horizon: float = MAX_HORIZON_MIN

    def __post_init__(self):
        if min(self.do, self.tno2, self.tan) < 0:
            raise ValueError("clamped levels must be >= 0")
        if not self.max_horizon > 0:
            raise ValueError("run length must be > 0")

    def environment(self) -> Environment:
        return Environment(pH=self.pH, temperature=self.temperature, stripping_enabled=True)

    def initial_state(self) -> np.ndarray:
        return make_state(S_O2=self.do, S_TNO2=self.tno2, S_TAN=self.tan, **self.biomass)


@dataclass(frozen=True)
class ScenarioResult:
    spec: ScenarioSpec
    factor_n2o: float | None      # % of NH4-N removed
    factor_no: float | None
    shares: dict | None           # NN, ND, HD
    steadiness: float             # relative EF change over the trailing window
    converged: bool
    horizon: float                # min
    removal_rate: float           # mgN/L/d at the end of the run
    implied_supply: dict          # clamp fluxes, per day
    trajectory: Trajectory = field(repr=False, default=None)

    @property
    def no_removal(self) -> bool:
        return self.factor_n2o is None


def _net_rates(states, kernel):
    """Per-point net reaction rates of N2O, NO and the three clamped pools (per day).

    Gas exchange rows are left out: the factor counts biological production.
    """
    R = K.rates_along(states, kernel.p, kernel.env)
    S = kernel.stoich[:REACTION_ROWS]
    cols = [COMPONENT_INDEX[c] for c in ("S_N2O", "S_NO", "S_TAN", "S_TNO2", "S_O2")]
    return R, R[:, :REACTION_ROWS] @ S[:, cols]


def _trailing_factor(t, num, den):
    """Ratio of trapezoid integrals of ``num`` and ``den`` over the trailing window."""
    start = t[-1] - TRAILING_FRACTION * (t[-1] - t[0])
    m = t >= start - 1e-12
    d = np.trapezoid(den[m], t[m])
    return np.trapezoid(num[m], t[m]) / d if d > 0 else None, start


def run_scenario(spec: ScenarioSpec, params: ParameterSet, rtol: float = 1e-6,
                 atol: float = 1e-9, keep_trajectory: bool = False) -> ScenarioResult:
    """Integrate with clamped DO/TNO2/TAN until the emission factor is steady."""
    kernel = Kernel.build(params, spec.environment(), frozen=CLAMPED + HELD)
    y0 = spec.initial_state()
    horizon = min(FIRST_HORIZON_MIN, spec.max_horizon)
    while True:
        t = np.linspace(0.0, horizon, POINTS_PER_HORIZON + 1)
        Y = integrate(y0, t, kernel, rtol, atol)
        R, net = _net_rates(Y, kernel)
        removal = -net[:, 2]
        ef, start = _trailing_factor(t, net[:, 0], removal)
        steadiness = np.inf
        if ef is not None:
            i0 = int(np.searchsorted(t, start - 1e-12))
            inst = net[:, 0] / np.where(removal > 0, removal, np.nan)
            a, b = inst[i0], inst[-1]
            steadiness = abs(b - a) / abs(b) if np.isfinite(a) and np.isfinite(b) and b != 0 else (
                0.0 if a == b else np.inf)
        converged = steadiness < STEADY_TOL
        if converged or horizon >= spec.max_horizon or ef is None and removal[-1] <= 0:
            break
        horizon = min(2 * horizon, spec.max_horizon)
    traj = Trajectory(t, Y, R, params, f"DO={spec.do} TNO2={spec.tno2} TAN={spec.tan}")
    supply = {
        "S_TAN": float(-net[-1, 2]), "S_TNO2": float(-net[-1, 3]), "S_O2": float(-net[-1, 4]),
    }
    if ef is None or removal[-1] <= 0:
        return ScenarioResult(spec, None, None, None, float("nan"), False, horizon,
                              float(removal[-1]), supply, traj if keep_trajectory else None)
    ef_no, _ = _trailing_factor(t, net[:, 1], removal)
    fluxes = pathway_fluxes(traj, t_start=start)
    if not converged:
        log.warning("scenario %s not steady after %.0f min (residual %.2e)", traj.label, horizon, steadiness)
    return ScenarioResult(
        spec, 100.0 * max(ef, 0.0), 100.0 * max(ef_no, 0.0), fluxes.shares(), float(steadiness),
        bool(converged), horizon, float(removal[-1]), supply, traj if keep_trajectory else None)


@dataclass(frozen=True)
class GridCell:
    do: float
    tno2: float
    tan: float
    result: ScenarioResult | None
    error: str | None = None


def grid_scan(do_levels, tno2_levels, tan_levels, params: ParameterSet,
              base: ScenarioSpec | None = None, **kw) -> list[GridCell]:
    """Cartesian product of scenarios; a failing cell is recorded and the scan continues."""
    if not (len(do_levels) and len(tno2_levels) and len(tan_levels)):
        raise ValueError("level lists must be nonempty")
    base = base or ScenarioSpec(do=0.0, tno2=0.0)
    cells = []
    for do, tno2, tan in itertools.product(do_levels, tno2_levels, tan_levels):
        spec = replace(base, do=float(do), tno2=float(tno2), tan=float(tan))
        try:
            cells.append(GridCell(do, tno2, tan, run_scenario(spec, params, **kw)))
        except (IntegrationError, FloatingPointError, ValueError) as exc:
            log.warning("scenario cell DO=%s TNO2=%s TAN=%s failed: %s", do, tno2, tan, exc)
            cells.append(GridCell(do, tno2, tan, None, str(exc)))
    return cells


GRID_COLUMNS = ("DO", "TNO2", "TAN", "factor_N2O", "factor_NO", "share_NN", "share_ND",
                "share_HD", "steadiness")


def grid_rows(cells: list[GridCell]) -> list[dict]:
    """Long-format rows for heat-map plotting; missing values are NaN."""
    rows = []
    nan = float("nan")
    for c in cells:
        r = c.result
        sh = (r.shares if r is not None else None) or {}
        rows.append({
            "DO": c.do, "TNO2": c.tno2, "TAN": c.tan,
            "factor_N2O": nan if r is None or r.factor_n2o is None else r.factor_n2o,
            "factor_NO": nan if r is None or r.factor_no is None else r.factor_no,
            "share_NN": sh.get("NN", nan), "share_ND": sh.get("ND", nan),
            "share_HD": sh.get("HD", nan),
            "steadiness": nan if r is None else r.steadiness,
        })
    return rows


NITRITE_SWEEP_DO = (0.3, 1.3)
NITRITE_SWEEP_TNO2 = (0.0, 1.0, 5.0, 15.0, 100.0)


@dataclass(frozen=True)
class CellUncertainty:
    spec: ScenarioSpec
    mean: float
    sd: float                     # Monte-Carlo spread of the factor
    relative_se: float            # sd / mean
    variance_shares: dict         # normalized beta^2 per parameter
    factors: np.ndarray = field(repr=False)
    failures: int = 0


def scenario_uncertainty(specs, dist, params: ParameterSet, n: int = 500, seed: int = 0,
                         correlated: bool = False) -> list[CellUncertainty]:
    """Per-cell Monte-Carlo of the N2O factor with one shared parameter sample."""
    from .sensitivity import src_coefficients
    from .uncertainty import MAX_FAILURE_FRACTION, PropagationError

    X = dist.sample(n, seed, correlated)
    out = []
    for spec in specs:
        ef = np.full(n, np.nan)
        for i, row in enumerate(X):
            try:
                r = run_scenario(spec, params.replace(dict(zip(dist.names, row))))
            except (IntegrationError, FloatingPointError) as exc:
                log.info("scenario sample %d failed: %s", i, exc)
                continue
            if r.factor_n2o is not None:
                ef[i] = r.factor_n2o
        ok = np.isfinite(ef)
        failures = int((~ok).sum())
        if failures > MAX_FAILURE_FRACTION * n:
            raise PropagationError(f"{failures} of {n} scenario samples failed at DO={spec.do} TNO2={spec.tno2}")
        mean = float(ef[ok].mean())
        sd = float(ef[ok].std(ddof=1)) if ok.sum() > 1 else 0.0
        shares = {}
        if sd > 0 and np.all(dist.upper > dist.lower):
            b2 = src_coefficients(X[ok], ef[ok], dist.names).beta[0] ** 2
            shares = dict(zip(dist.names, (b2 / b2.sum()).tolist())) if b2.sum() > 0 else {}
        out.append(CellUncertainty(spec, mean, sd, sd / mean if mean > 0 else float("nan"),
                                   shares, ef, failures))
    return out


def nitrite_sweep_specs(base: ScenarioSpec | None = None) -> list[ScenarioSpec]:
    base = base or ScenarioSpec(do=0.0, tno2=0.0)
    return [replace(base, do=d, tno2=t, tan=70.0) for d in NITRITE_SWEEP_DO for t in NITRITE_SWEEP_TNO2]
