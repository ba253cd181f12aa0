import re
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "ndha" / "data"
ORACLES = Path(__file__).parent / "oracles"
EXPERIMENTS = DATA / "experiments"


def read_default_values() -> dict[str, float]:
    """Parameter values straight from the shipped text file, bypassing the package parser."""
    out = {}
    for line in (DATA / "default_params.txt").read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            name, rest = line.split("=", 1)
            out[name.strip()] = float(re.match(r"\s*(\S+)", rest).group(1))
    return out


@pytest.fixture(scope="session")
def defaults():
    from ndha.params import ParameterSet
    return ParameterSet.default()


@pytest.fixture(scope="session")
def truth():
    from ndha.params import calibrated_parameters
    return calibrated_parameters()


def shipped_experiments():
    from ndha.io import load_experiment
    return {p.stem: load_experiment(p) for p in sorted(EXPERIMENTS.glob("*.yaml")) if p.stem != "index"}


def rk4(f, y0, t_end, dt):
    """Fixed-step classical Runge-Kutta; returns the state at t_end."""
    y = np.array(y0, dtype=float)
    n = int(round(t_end / dt))
    h = t_end / n
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
