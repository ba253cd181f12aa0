"""Parameter registry, parameter files and temperature correction.

Parameter files are flat text, one parameter per line::

    mu_AOB.AMO = 0.78 [1/d] class=2

Blank lines and ``#`` comments are ignored. The uncertainty class maps to a
symmetric uniform range around the value (1: 10 %, 2: 25 %, 3: 50 %).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

CLASS_WIDTH = {1: 0.10, 2: 0.25, 3: 0.50}

_LINE = re.compile(
    r"^\s*(?P<name>[A-Za-z_][\w.]*)\s*=\s*(?P<value>[^\s\[]+)"
    r"\s*(?:\[(?P<unit>[^\]]*)\])?\s*(?:class\s*=\s*(?P<cls>\d+))?\s*$"
)

# Yields, composition and gas-transfer constants are never calibrated and are
# left out of sensitivity sampling by default.
FIXED_PARAMETERS = frozenset(
    {
        "Y_AOB", "Y_NOB", "Y_HB", "f_XI", "i_NXB", "i_NXI", "i_NXS",
        "K_La.O2", "K_La.N2O", "K_La.NO", "S_sat.O2", "S_sat.N2O", "S_sat.NO",
    }
)

# Dimensionless factors that must lie in (0, 1].
FRACTIONS = frozenset(
    {
        "eps_AOB", "eta_NIR", "eta_NOR", "eta_HD", "eta_b", "eta_anox",
        "eta_anaer", "f_XI",
    }
)
SATURATIONS = frozenset({"S_sat.O2", "S_sat.N2O", "S_sat.NO"})


class ParameterFileError(ValueError):
    """Malformed parameter file line."""


def _parse_lines(lines: Iterable[str], source: str = "<string>"):
    entries = []
    seen = set()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if m is None:
            raise ParameterFileError(f"{source}:{lineno}: cannot parse {raw.strip()!r}")
        name = m["name"]
        if name in seen:
            raise ParameterFileError(f"{source}:{lineno}: duplicate parameter {name!r}")
        try:
            value = float(m["value"])
        except ValueError:
            raise ParameterFileError(f"{source}:{lineno}: bad value {m['value']!r}") from None
        cls = int(m["cls"]) if m["cls"] else None
        if cls is not None and cls not in CLASS_WIDTH:
            raise ParameterFileError(f"{source}:{lineno}: uncertainty class must be 1, 2 or 3")
        seen.add(name)
        entries.append((name, value, (m["unit"] or "").strip(), cls))
    return entries


@lru_cache(maxsize=1)
def _registry():
    text = resources.files("ndha.data").joinpath("default_params.txt").read_text()
    return tuple(_parse_lines(text.splitlines(), "default_params.txt"))


PARAM_NAMES: tuple[str, ...] = tuple(e[0] for e in _registry())
PARAM_INDEX = {name: i for i, name in enumerate(PARAM_NAMES)}


@dataclass(frozen=True)
class ParameterSet:
    """Named kinetic and stoichiometric constants with units and uncertainty classes."""

    values: Mapping[str, float]
    units: Mapping[str, str] = field(default_factory=dict)
    classes: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(PARAM_NAMES) - set(self.values)
        unknown = set(self.values) - set(PARAM_NAMES)
        if missing or unknown:
            raise KeyError(f"parameter set mismatch: missing={sorted(missing)}, unknown={sorted(unknown)}")

    @classmethod
    def default(cls) -> "ParameterSet":
        entries = _registry()
        return cls(
            values={n: v for n, v, _, _ in entries},
            units={n: u for n, _, u, _ in entries},
            classes={n: c for n, _, _, c in entries},
        )

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def __iter__(self):
        return iter(PARAM_NAMES)

    def __len__(self):
        return len(PARAM_NAMES)

    def replace(self, updates: Mapping[str, float] | None = None, **kwargs) -> "ParameterSet":
        new = dict(self.values)
        for name, value in {**(updates or {}), **kwargs}.items():
            if name not in PARAM_INDEX:
                raise KeyError(f"unknown parameter {name!r}")
            new[name] = float(value)
        return ParameterSet(new, self.units, self.classes)

    def to_array(self) -> np.ndarray:
        return np.array([self.values[n] for n in PARAM_NAMES], dtype=float)

    def uncertainty_class(self, name: str) -> int:
        return self.classes[name]

    def class_range(self, name: str) -> tuple[float, float]:
        w = CLASS_WIDTH[self.classes[name]]
        v = self.values[name]
        return v * (1 - w), v * (1 + w)

    def validate(self) -> None:
        """Raise ``ValueError`` if any value violates its sign or range constraint."""
        bad = []
        for name in PARAM_NAMES:
            v = self.values[name]
            if not math.isfinite(v):
                bad.append(f"{name}={v} (non-finite)")
            elif name in SATURATIONS:
                if v < 0:
                    bad.append(f"{name}={v} (must be >= 0)")
            elif v <= 0:
                bad.append(f"{name}={v} (must be > 0)")
            elif name in FRACTIONS and v > 1:
                bad.append(f"{name}={v} (must be <= 1)")
        if bad:
            raise ValueError("invalid parameters: " + ", ".join(bad))


def parse_parameters(text: str, base: ParameterSet | None = None, source: str = "<string>") -> ParameterSet:
    """Parse parameter-file text. Lines override ``base`` (defaults if omitted)."""
    base = base or ParameterSet.default()
    entries = _parse_lines(text.splitlines(), source)
    values, units, classes = dict(base.values), dict(base.units), dict(base.classes)
    for name, value, unit, cls in entries:
        if name not in PARAM_INDEX:
            raise ParameterFileError(f"{source}: unknown parameter {name!r}")
        values[name] = value
        if unit:
            units[name] = unit
        if cls is not None:
            classes[name] = cls
    return ParameterSet(values, units, classes)


def load_parameters(path: str | Path, base: ParameterSet | None = None) -> ParameterSet:
    path = Path(path)
    return parse_parameters(path.read_text(), base, str(path))


def format_parameters(params: ParameterSet) -> str:
    lines = []
    for name in PARAM_NAMES:
        unit = params.units.get(name, "")
        cls = params.classes.get(name)
        line = f"{name} = {params[name]!r}"
        if unit:
            line += f" [{unit}]"
        if cls is not None:
            line += f" class={cls}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def save_parameters(params: ParameterSet, path: str | Path) -> None:
    Path(path).write_text(format_parameters(params))


def temperature_correct(params: ParameterSet, T: float, theta: Mapping[str, float] | None = None) -> ParameterSet:
    """Scale parameters by ``exp(theta_p * (T - 20))``.

    Only names listed in ``theta`` are touched; with no coefficients the set is
    returned unchanged at any temperature.
    """
    if not 0.0 <= T <= 45.0:
        raise ValueError(f"temperature {T} outside [0, 45] C")
    theta = theta or {}
    unknown = [n for n in theta if n not in PARAM_INDEX]
    if unknown:
        raise KeyError(f"unknown parameter(s) in theta configuration: {unknown}")
    if T == 20.0:
        return params
    return params.replace({n: params[n] * math.exp(th * (T - 20.0)) for n, th in theta.items()})


# Reference best-fit values and their coefficients of variation (%), 20 C.
CALIBRATED_ESTIMATES = {
    "mu_NOB": (0.67, 1.0),
    "k_H": (2.01, 0.9),
    "mu_AOB.AMO": (0.49, 2.0),
    "K_AOB.NH3": (0.12, 3.9),
    "K_AOB.O2.AMO": (0.23, 7.0),
    "eta_HD": (0.055, 0.7),
    "eps_AOB": (0.00048, 1.1),
    "K_AOB.HNO2": (0.00067, 4.4),
    "eta_NOR": (0.16, 3.2),
    "K_AOB.NH2OH.ND": (0.25, 1.8),
}


def calibrated_parameters(base: ParameterSet | None = None) -> ParameterSet:
    """Defaults with the ten reference best-fit estimates substituted."""
    base = base or ParameterSet.default()
    return base.replace({k: v for k, (v, _) in CALIBRATED_ESTIMATES.items()})
