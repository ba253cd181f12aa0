"""Compiled rate and right-hand-side kernels.

Everything here works on flat float arrays: ``y`` (15 components, fixed
order), ``p`` (parameter vector in ``PARAM_NAMES`` order), ``env`` =
``[fraction NH3 of TAN, fraction HNO2 of TNO2, aeration flag, stripping flag]``.
Rates are per day.
"""

import numpy as np
from numba import njit

from .params import PARAM_INDEX as _P

N_COMP = 15
N_PROC = 20

# state indices
S_S, S_O2, S_TAN, S_NH2OH, S_TNO2, S_NO3, S_NO, S_N2O, S_N2, S_IC = range(10)
X_AOB, X_NOB, X_HB, X_S, X_I = range(10, 15)

K_NH2OH = _P["K_AOB.NH2OH"]
K_NH2OH_ND = _P["K_AOB.NH2OH.ND"]
K_NH3 = _P["K_AOB.NH3"]
K_NO_ND = _P["K_AOB.NO.ND"]
K_HNO2_AOB = _P["K_AOB.HNO2"]
K_O2_AMO = _P["K_AOB.O2.AMO"]
K_O2_HAO = _P["K_AOB.O2.HAO"]
K_O2_I_AOB = _P["K_AOB.O2.i"]
K_I_NH3_AOB = _P["K_AOB.i.NH3"]
K_I_HNO2_AOB = _P["K_AOB.i.HNO2"]
EPS_AOB = _P["eps_AOB"]
ETA_NIR = _P["eta_NIR"]
ETA_NOR = _P["eta_NOR"]
MU_AMO = _P["mu_AOB.AMO"]
MU_HAO = _P["mu_AOB.HAO"]
B_AOB = _P["b_AOB"]
K_HNO2_NOB = _P["K_NOB.HNO2"]
K_O2_NOB = _P["K_NOB.O2"]
K_I_NH3_NOB = _P["K_NOB.i.NH3"]
K_I_HNO2_NOB = _P["K_NOB.i.HNO2"]
MU_NOB = _P["mu_NOB"]
B_NOB = _P["b_NOB"]
K_HB_NH4 = _P["K_HB.NH4"]
K_HB_NO3 = _P["K_HB.NO3"]
K_HB_NO2 = _P["K_HB.NO2"]
K_HB_NO = _P["K_HB.NO"]
K_HB_N2O = _P["K_HB.N2O"]
K_HB_S = _P["K_HB.S"]
K_HB_S_NAR = _P["K_HB.S.NAR"]
K_HB_S_NIR = _P["K_HB.S.NIR"]
K_HB_S_NOR = _P["K_HB.S.NOR"]
K_HB_S_NOS = _P["K_HB.S.NOS"]
K_HB_O2 = _P["K_HB.O2"]
K_HB_O2_NAR = _P["K_HB.O2.i.NAR"]
K_HB_O2_NIR = _P["K_HB.O2.i.NIR"]
K_HB_O2_NOR = _P["K_HB.O2.i.NOR"]
K_HB_O2_NOS = _P["K_HB.O2.i.NOS"]
K_HB_NOI_NIR = _P["K_HB.NO.i.NIR"]
K_HB_NOI_NOR = _P["K_HB.NO.i.NOR"]
K_HB_NOI_NOS = _P["K_HB.NO.i.NOS"]
MU_HB = _P["mu_HB"]
MU_NAR = _P["mu_HB.NAR"]
MU_NIR = _P["mu_HB.NIR"]
MU_NOR = _P["mu_HB.NOR"]
MU_NOS = _P["mu_HB.NOS"]
ETA_HD = _P["eta_HD"]
B_HB = _P["b_HB"]
ETA_B = _P["eta_b"]
K_O2_B = _P["K_O2.b"]
K_NOX = _P["K_NOx"]
K_H = _P["k_H"]
K_X = _P["K_X"]
ETA_ANOX = _P["eta_anox"]
ETA_ANAER = _P["eta_anaer"]
KLA_O2 = _P["K_La.O2"]
KLA_N2O = _P["K_La.N2O"]
KLA_NO = _P["K_La.NO"]
SAT_O2 = _P["S_sat.O2"]
SAT_N2O = _P["S_sat.N2O"]
SAT_NO = _P["S_sat.NO"]


@njit(cache=True)
def _m(s, k):
    d = s + k
    if d == 0.0:
        return 0.0
    return s / d


@njit(cache=True)
def _i(s, k):
    d = s + k
    if d == 0.0:
        return 0.0
    return k / d


@njit(cache=True)
def rates_into(y, p, env, out):
    ss = y[S_S]
    o2 = y[S_O2]
    tan = y[S_TAN]
    nh2oh = y[S_NH2OH]
    tno2 = y[S_TNO2]
    no3 = y[S_NO3]
    no = y[S_NO]
    n2o = y[S_N2O]
    xa = y[X_AOB]
    xn = y[X_NOB]
    xh = y[X_HB]
    xs = y[X_S]

    nh3 = env[0] * tan
    nh4 = tan - nh3
    hno2 = env[1] * tno2
    no2 = tno2 - hno2

    # AOB
    d_nh3 = nh3 + p[K_NH3] + nh3 * nh3 / p[K_I_NH3_AOB]
    f_nh3 = nh3 / d_nh3 if d_nh3 != 0.0 else 0.0
    out[0] = (p[MU_AMO] * _m(o2, p[K_O2_AMO]) * f_nh3
              * _i(hno2, p[K_I_HNO2_AOB]) * xa)
    m_nh2oh = _m(nh2oh, p[K_NH2OH])
    out[1] = p[MU_HAO] * p[EPS_AOB] * m_nh2oh * xa
    out[2] = p[MU_HAO] * (1.0 - p[EPS_AOB]) * _m(o2, p[K_O2_HAO]) * m_nh2oh * xa
    m_nd = _m(nh2oh, p[K_NH2OH_ND])
    out[3] = (p[MU_HAO] * p[ETA_NIR] * _i(o2, p[K_O2_I_AOB]) * m_nd
              * _m(hno2, p[K_HNO2_AOB]) * xa)
    out[4] = p[MU_HAO] * p[ETA_NOR] * m_nd * _m(no, p[K_NO_ND]) * xa

    # NOB
    d_hno2 = hno2 + p[K_HNO2_NOB] + hno2 * hno2 / p[K_I_HNO2_NOB]
    f_hno2 = hno2 / d_hno2 if d_hno2 != 0.0 else 0.0
    out[5] = (p[MU_NOB] * _m(o2, p[K_O2_NOB]) * f_hno2
              * _i(nh3, p[K_I_NH3_NOB]) * xn)

    # HB; eta_HD scales the four denitrification steps
    m_nh4 = _m(nh4, p[K_HB_NH4])
    out[6] = p[MU_HB] * _m(o2, p[K_HB_O2]) * m_nh4 * _m(ss, p[K_HB_S]) * xh
    hd = p[ETA_HD]
    out[7] = (p[MU_NAR] * hd * _i(o2, p[K_HB_O2_NAR]) * _m(ss, p[K_HB_S_NAR])
              * m_nh4 * _m(no3, p[K_HB_NO3]) * xh)
    out[8] = (p[MU_NIR] * hd * _i(o2, p[K_HB_O2_NIR]) * _i(no, p[K_HB_NOI_NIR])
              * _m(ss, p[K_HB_S_NIR]) * m_nh4 * _m(no2, p[K_HB_NO2]) * xh)
    d_no = no + p[K_HB_NO] + no * no / p[K_HB_NOI_NOR]
    f_no = no / d_no if d_no != 0.0 else 0.0
    out[9] = (p[MU_NOR] * hd * _i(o2, p[K_HB_O2_NOR]) * _m(ss, p[K_HB_S_NOR])
              * m_nh4 * f_no * xh)
    out[10] = (p[MU_NOS] * hd * _i(o2, p[K_HB_O2_NOS]) * _i(no, p[K_HB_NOI_NOS])
               * _m(ss, p[K_HB_S_NOS]) * m_nh4 * _m(n2o, p[K_HB_N2O]) * xh)

    # lysis
    nox = no2 + no3
    switch = _m(o2, p[K_O2_B]) + p[ETA_B] * _i(o2, p[K_O2_B]) * _m(nox, p[K_NOX])
    out[11] = p[B_AOB] * switch * xa
    out[12] = p[B_NOB] * switch * xn
    out[13] = p[B_HB] * switch * xh

    # hydrolysis: (X_S/X_HB)/(K_X + X_S/X_HB) * X_HB written without the division
    d_h = p[K_X] * xh + xs
    hyd = p[K_H] * xs * xh / d_h if d_h != 0.0 else 0.0
    out[14] = hyd * _m(o2, p[K_HB_O2])
    out[15] = hyd * p[ETA_ANOX] * _i(o2, p[K_HB_O2]) * _m(no3, p[K_HB_NO3])
    out[16] = hyd * p[ETA_ANAER] * _i(o2, p[K_HB_O2]) * _i(no3, p[K_HB_NO3])

    # gas exchange
    if env[2] != 0.0:
        out[17] = p[KLA_O2] * (p[SAT_O2] - o2)
    else:
        out[17] = 0.0
    if env[3] != 0.0:
        out[18] = p[KLA_N2O] * (n2o - p[SAT_N2O])
        out[19] = p[KLA_NO] * (no - p[SAT_NO])
    else:
        out[18] = 0.0
        out[19] = 0.0


@njit(cache=True)
def rhs_into(y, p, env, stoich, active, frozen, scale, r, dy):
    """dy = scale * (stoich^T (active * r)), zeroed where ``frozen`` is set."""
    rates_into(y, p, env, r)
    for j in range(N_COMP):
        dy[j] = 0.0
    for k in range(N_PROC):
        rk = r[k] * active[k]
        if rk == 0.0:
            continue
        for j in range(N_COMP):
            c = stoich[k, j]
            if c != 0.0:
                dy[j] += c * rk
    for j in range(N_COMP):
        if frozen[j] != 0.0:
            dy[j] = 0.0
        else:
            dy[j] *= scale


@njit(cache=True)
def rhs(y, t, p, env, stoich, active, frozen, scale):
    r = np.empty(N_PROC)
    dy = np.empty(N_COMP)
    rhs_into(y, p, env, stoich, active, frozen, scale, r, dy)
    return dy


@njit(cache=True)
def jac(y, t, p, env, stoich, active, frozen, scale):
    """Forward-difference Jacobian, J[i, j] = d f_i / d y_j."""
    n = N_COMP
    r = np.empty(N_PROC)
    f0 = np.empty(n)
    f1 = np.empty(n)
    rhs_into(y, p, env, stoich, active, frozen, scale, r, f0)
    J = np.empty((n, n))
    yy = y.copy()
    for j in range(n):
        h = 1.5e-8 * max(abs(y[j]), 1e-6)
        yy[j] = y[j] + h
        rhs_into(yy, p, env, stoich, active, frozen, scale, r, f1)
        for i in range(n):
            J[i, j] = (f1[i] - f0[i]) / h
        yy[j] = y[j]
    return J


@njit(cache=True)
def rates_along(Y, p, env):
    """Process rates for each row of a (m, 15) state array."""
    m = Y.shape[0]
    R = np.empty((m, N_PROC))
    r = np.empty(N_PROC)
    for i in range(m):
        rates_into(Y[i], p, env, r)
        R[i, :] = r
    return R
