"""NDHA state layout, speciation, stoichiometric matrix and rate evaluation.

The state carries total pools for ammonia (``S_TAN``) and nitrite
(``S_TNO2``); the free species NH3 and HNO2 that the rate laws use are
fixed fractions of those pools at the experiment pH.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _kernels as K
from .params import ParameterSet

COMPONENTS = (
    "S_S", "S_O2", "S_TAN", "S_NH2OH", "S_TNO2", "S_NO3", "S_NO", "S_N2O",
    "S_N2", "S_IC", "X_AOB", "X_NOB", "X_HB", "X_S", "X_I",
)
COMPONENT_INDEX = {c: i for i, c in enumerate(COMPONENTS)}

PROCESSES = (
    "Aerobic_AMO", "Aerobic_HAO*", "Aerobic_HAO", "Anox_A_NIR", "Anox_A_NOR",
    "Aer_NOB_growth", "Aerobic_H_growth", "Anox_H_NAR", "Anox_H_NIR",
    "Anox_H_NOR", "Anox_H_NOS", "Lysis_AOB", "Lysis_NOB", "Lysis_HB",
    "Hydrolysis_aerobic", "Hydrolysis_anoxic", "Hydrolysis_anaerobic",
    "Aeration", "Stripping_N2O", "Stripping_NO",
)
N_COMPONENTS = len(COMPONENTS)
N_PROCESSES = len(PROCESSES)
REACTION_ROWS = range(17)

# pKa defaults: nitrous acid anchored at 3.26 (25 C) with the Anthonisen
# temperature slope; ammonium after Emerson et al. (1975).
PKA_HNO2_25C = 3.26
HNO2_VANT_HOFF_K = 2300.0
T_REF_K = 298.15


def pka_nh4(T: float) -> float:
    return 0.09018 + 2729.92 / (T + 273.15)


def pka_hno2(T: float) -> float:
    return PKA_HNO2_25C + HNO2_VANT_HOFF_K / math.log(10.0) * (1.0 / (T + 273.15) - 1.0 / T_REF_K)


@dataclass(frozen=True)
class Environment:
    pH: float = 7.5
    temperature: float = 25.0
    aeration_enabled: bool = False
    stripping_enabled: bool = False
    pka_nh4: float | None = None
    pka_hno2: float | None = None

    def __post_init__(self):
        if not 3.0 <= self.pH <= 12.0:
            raise ValueError(f"pH {self.pH} outside [3, 12]")
        if not 0.0 <= self.temperature <= 45.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 45] C")

    def pkas(self) -> tuple[float, float]:
        a = self.pka_nh4 if self.pka_nh4 is not None else pka_nh4(self.temperature)
        b = self.pka_hno2 if self.pka_hno2 is not None else pka_hno2(self.temperature)
        return a, b

    def fractions(self) -> tuple[float, float]:
        """Free-species fractions (NH3 of TAN, HNO2 of TNO2)."""
        a, b = self.pkas()
        return 1.0 / (1.0 + 10.0 ** (a - self.pH)), 1.0 / (1.0 + 10.0 ** (self.pH - b))

    def kernel_vector(self) -> np.ndarray:
        f_nh3, f_hno2 = self.fractions()
        return np.array([f_nh3, f_hno2, float(self.aeration_enabled), float(self.stripping_enabled)])


def speciate(S_TAN: float, S_TNO2: float, env: Environment) -> tuple[float, float]:
    """Free ammonia and free nitrous acid (both mgN/L) from the total pools."""
    if S_TAN < 0 or S_TNO2 < 0:
        raise ValueError("pools must be nonnegative")
    f_nh3, f_hno2 = env.fractions()
    return S_TAN * f_nh3, S_TNO2 * f_hno2


def make_state(**conc: float) -> np.ndarray:
    """State vector with the named components set and the rest zero."""
    y = np.zeros(N_COMPONENTS)
    for name, value in conc.items():
        if name not in COMPONENT_INDEX:
            raise KeyError(f"unknown component {name!r}")
        y[COMPONENT_INDEX[name]] = value
    return y


def stoichiometry(params: ParameterSet) -> np.ndarray:
    """The 20 x 15 stoichiometric matrix evaluated at ``params``.

    Column 3 holds the ammonia entries and column 5 the nitrite entries; both
    act on the total pools.
    """
    p = params
    Ya, Yn, Yh = p["Y_AOB"], p["Y_NOB"], p["Y_HB"]
    iB, iI, iS, fI = p["i_NXB"], p["i_NXI"], p["i_NXS"], p["f_XI"]
    c = COMPONENT_INDEX
    M = np.zeros((N_PROCESSES, N_COMPONENTS))

    def row(k, **entries):
        for name, v in entries.items():
            M[k, c[name]] = v

    row(0, S_O2=-1.14, S_TAN=-1.0, S_NH2OH=1.0, S_IC=-1 / 14)
    row(1, S_TAN=-iB, S_NH2OH=-1 / Ya, S_NO=1 / Ya, S_IC=-iB / 14, X_AOB=1.0)
    row(2, S_O2=-(2.29 - Ya) / Ya, S_TAN=-iB, S_NH2OH=-1 / Ya, S_TNO2=1 / Ya,
        S_IC=-(iB - 1 / Ya) / 14, X_AOB=1.0)
    row(3, S_NH2OH=-1.0, S_TNO2=-3.0, S_NO=4.0, S_IC=3 / 14)
    row(4, S_NH2OH=-1.0, S_NO=-2.0, S_N2O=3.0, S_IC=-1 / 14)
    row(5, S_O2=-(1.14 - Yn) / Yn, S_TAN=-iB, S_TNO2=-1 / Yn, S_NO3=1 / Yn,
        S_IC=-iB / 14, X_NOB=1.0)
    row(6, S_S=-1 / Yh, S_O2=-(1 - Yh) / Yh, S_TAN=-iB, S_IC=-iB / 14, X_HB=1.0)
    nar = (1 - Yh) / (1.14 * Yh)
    den = (1 - Yh) / (0.57 * Yh)
    row(7, S_S=-1 / Yh, S_TAN=-iB, S_TNO2=nar, S_NO3=-nar, S_IC=-iB / 14, X_HB=1.0)
    row(8, S_S=-1 / Yh, S_TAN=-iB, S_TNO2=-den, S_NO=den,
        S_IC=-(iB * den) / 14, X_HB=1.0)
    row(9, S_S=-1 / Yh, S_TAN=-iB, S_NO=-den, S_N2O=den, S_IC=-iB / 14, X_HB=1.0)
    row(10, S_S=-1 / Yh, S_TAN=-iB, S_N2O=-den, S_N2=den, S_IC=-iB / 14, X_HB=1.0)
    lysis_n = iB - fI * iI - (1 - fI) * iS
    for k, x in ((11, "X_AOB"), (12, "X_NOB"), (13, "X_HB")):
        row(k, S_TAN=lysis_n, S_IC=lysis_n / 14, X_S=1 - fI, X_I=fI)
        M[k, c[x]] = -1.0
    for k in (14, 15, 16):
        row(k, S_S=1.0, S_TAN=iS, S_IC=iS / 14, X_S=-1.0)
    row(17, S_O2=1.0)
    row(18, S_N2O=-1.0)
    row(19, S_NO=-1.0)
    return M


def nitrogen_content(params: ParameterSet) -> np.ndarray:
    """mgN per unit of each component (soluble N species count 1)."""
    w = np.zeros(N_COMPONENTS)
    for name in ("S_TAN", "S_NH2OH", "S_TNO2", "S_NO3", "S_NO", "S_N2O", "S_N2"):
        w[COMPONENT_INDEX[name]] = 1.0
    for name in ("X_AOB", "X_NOB", "X_HB"):
        w[COMPONENT_INDEX[name]] = params["i_NXB"]
    w[COMPONENT_INDEX["X_S"]] = params["i_NXS"]
    w[COMPONENT_INDEX["X_I"]] = params["i_NXI"]
    return w


def total_nitrogen(y: np.ndarray, params: ParameterSet) -> np.ndarray:
    return np.asarray(y) @ nitrogen_content(params)


def nitrogen_row_balance(params: ParameterSet) -> dict[str, float]:
    """Relative nitrogen imbalance of each reaction row (0 for a balanced row)."""
    M = stoichiometry(params)
    w = nitrogen_content(params)
    out = {}
    for k in REACTION_ROWS:
        terms = M[k] * w
        scale = np.abs(terms).sum()
        out[PROCESSES[k]] = abs(terms.sum()) / scale if scale else 0.0
    return out


class NonFiniteRateError(FloatingPointError):
    def __init__(self, rows):
        self.rows = rows
        super().__init__("non-finite process rate in: " + ", ".join(rows))


def process_rates(state, params: ParameterSet, env: Environment) -> np.ndarray:
    """The 20 process rates (per day) at one state."""
    y = np.asarray(state, dtype=float)
    if y.shape != (N_COMPONENTS,):
        raise ValueError(f"state must have {N_COMPONENTS} entries")
    r = np.empty(N_PROCESSES)
    K.rates_into(y, params.to_array(), env.kernel_vector(), r)
    bad = ~np.isfinite(r)
    if bad.any():
        raise NonFiniteRateError([PROCESSES[k] for k in np.flatnonzero(bad)])
    return r


def derivatives(state, params: ParameterSet, env: Environment) -> np.ndarray:
    """d(state)/dt in concentration units per day."""
    return stoichiometry(params).T @ process_rates(state, params, env)


@dataclass(frozen=True)
class Kernel:
    """Pre-evaluated arrays for repeated right-hand-side calls."""

    p: np.ndarray
    env: np.ndarray
    stoich: np.ndarray
    active: np.ndarray
    frozen: np.ndarray

    @classmethod
    def build(cls, params: ParameterSet, env: Environment,
              active: Mapping[int, bool] | np.ndarray | None = None,
              frozen: tuple[str, ...] = ()) -> "Kernel":
        act = np.ones(N_PROCESSES)
        if active is not None:
            act = np.asarray(active, dtype=float).copy()
        fz = np.zeros(N_COMPONENTS)
        for name in frozen:
            fz[COMPONENT_INDEX[name]] = 1.0
        return cls(params.to_array(), env.kernel_vector(), stoichiometry(params), act, fz)

    def args(self, scale: float):
        return (self.p, self.env, self.stoich, self.active, self.frozen, scale)
