"""Independent evaluation of the transcribed matrix and rate-law tables with sympy."""

import csv
import math

import sympy as sp

from conftest import ORACLES


def _sym(name: str) -> str:
    return name.replace(".", "_")


def _eval(expr: str, values: dict[str, float]) -> float:
    e = sp.sympify(expr)
    subs = {s: values[s.name] for s in e.free_symbols}
    return float(e.subs(subs).evalf(30))


def matrix_cells():
    """Yield (process, component, expression text) for every non-empty cell."""
    with (ORACLES / "gujer_matrix.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    for row in rows[1:]:
        for comp, cell in zip(header, row[1:]):
            if cell.strip():
                yield row[0], comp, cell.strip()


def is_numeric(cell: str) -> bool:
    return not any(ch.isalpha() for ch in cell)


def matrix_value(cell: str, params: dict[str, float]) -> float:
    if is_numeric(cell):
        return float(eval(cell, {"__builtins__": {}}))  # plain float arithmetic, as a spreadsheet would
    return _eval(cell, {_sym(k): v for k, v in params.items()})


def rate_laws() -> list[tuple[str, str]]:
    out = []
    for line in (ORACLES / "rate_laws.txt").read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            name, expr = line.split(":", 1)
            out.append((name.strip(), expr.strip()))
    return out


def free_fractions(pH: float, T: float) -> tuple[float, float]:
    """Henderson-Hasselbalch fractions by hand: ammonium pKa 0.09018 + 2729.92/T_K;
    nitrous acid pKa 3.26 at 25 C shifted by 2300/ln(10) * (1/T_K - 1/298.15)."""
    tk = T + 273.15
    pka_nh4 = 0.09018 + 2729.92 / tk
    pka_hno2 = 3.26 + 2300.0 / math.log(10.0) * (1.0 / tk - 1.0 / 298.15)
    return 1.0 / (1.0 + 10.0 ** (pka_nh4 - pH)), 1.0 / (1.0 + 10.0 ** (pH - pka_hno2))


def rates(state: dict[str, float], params: dict[str, float], pH: float, T: float,
          aeration: bool, stripping: bool) -> list[float]:
    f_nh3, f_hno2 = free_fractions(pH, T)
    s = dict(state)
    s["S_NH3"] = s["S_TAN"] * f_nh3
    s["S_NH4"] = s["S_TAN"] - s["S_NH3"]
    s["S_HNO2"] = s["S_TNO2"] * f_hno2
    s["S_NO2"] = s["S_TNO2"] - s["S_HNO2"]
    s["S_NOx"] = s["S_NO2"] + s["S_NO3"]
    env = {**{_sym(k): v for k, v in params.items()}, **s}
    out = []
    for name, expr in rate_laws():
        if (name == "Aeration" and not aeration) or (name.startswith("Stripping") and not stripping):
            out.append(0.0)
        else:
            out.append(_eval(expr, env))
    return out
