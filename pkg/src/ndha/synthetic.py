"""Seeded synthetic batch assays for exercising the calibration pipeline.

Every assay starts from the same preconditioned, washed sludge and is simulated
with a "truth" parameter set. Measured series are sampled every 0.5 min with
Gaussian noise whose standard deviation is a fixed fraction of the noise-free
series maximum. Optional AR(1) noise mimics slowly drifting sensors.

Regenerate the shipped files with ``python3 -m ndha.synthetic [out_dir]``.
"""

from __future__ import annotations

import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .io import atomic_write_text, save_experiment
from .model import COMPONENT_INDEX, Environment, make_state
from .params import ParameterSet, calibrated_parameters
from .simulate import Experiment, MeasuredSeries, Pulse, observables, precondition_biomass, simulate

log = logging.getLogger(__name__)

SEED = 20240617
NOISE_FRACTION = 0.015
SAMPLE_INTERVAL_MIN = 0.5
AR_COEFFICIENT = 0.983          # per 0.5 min step, ~15 min correlation time
ASSAY_TEMPERATURE = 25.0
PRECONDITION_MIN = 720.0
PRECONDITION_DO = 8.0
HIGH_DO = 6.0                   # mg/L split between the two DO stages
ANOXIC_DO = 0.05

BASE_BIOMASS = {"X_AOB": 255.6, "X_NOB": 8.52, "X_HB": 42.6, "X_S": 20.0, "X_I": 99.28}
WASHED = ("S_S", "S_TAN", "S_NH2OH", "S_TNO2", "S_NO3", "S_NO", "S_N2O", "S_N2")


def washed_sludge(params: ParameterSet | None = None, duration: float = PRECONDITION_MIN) -> np.ndarray:
    """Aerated starvation with default kinetics, then all soluble N and substrate removed."""
    params = params or ParameterSet.default()
    env = Environment(pH=7.5, temperature=ASSAY_TEMPERATURE)
    y = precondition_biomass(make_state(S_O2=PRECONDITION_DO, **BASE_BIOMASS), params, env, duration)
    for c in WASHED:
        y[COMPONENT_INDEX[c]] = 0.0
    return y


@dataclass(frozen=True)
class Assay:
    label: str
    do0: float
    pulses: tuple
    horizon: float
    observed: tuple = ("DO",)
    pH: float = 7.5
    initial: dict = field(default_factory=dict)
    starvation_min: float = PRECONDITION_MIN

    def experiment(self, sludge: np.ndarray | None = None) -> Experiment:
        y0 = (washed_sludge(duration=self.starvation_min) if sludge is None else sludge).copy()
        y0[COMPONENT_INDEX["S_O2"]] = self.do0
        for c, v in self.initial.items():
            y0[COMPONENT_INDEX[c]] = v
        return Experiment(self.label, Environment(pH=self.pH, temperature=ASSAY_TEMPERATURE), y0,
                          tuple(Pulse(t, s, d) for t, s, d in self.pulses), self.horizon)


# NOB assays: long endogenous phases around small nitrite pulses, on sludge with
# different substrate/heterotroph ratios so hydrolysis rate and saturation separate.
# AMO assays: one small pulse consumed at high DO, one large pulse approaching
# ammonia saturation, one starting near the DO half-saturation range.
# ND assays reach anoxia at different nitrite levels; the anoxic AOB assay is a
# small hydroxylamine pulse on residual nitrite.
ASSAYS = {
    "nob_1": Assay("NOB_1", 24.0, ((60.0, "S_TNO2", 3.0),), 172.0, starvation_min=0.0),
    "nob_2": Assay("NOB_2", 30.0, ((40.0, "S_TNO2", 5.0), (200.0, "S_TNO2", 5.0)), 342.0, starvation_min=2880.0),
    "amo_1": Assay("AMO_1", 30.0, ((10.0, "S_TAN", 3.0),), 150.0, ("DO", "N2O")),
    "amo_2": Assay("AMO_2", 36.0, ((10.0, "S_TAN", 12.0),), 284.0, ("DO", "N2O")),
    "amo_3": Assay("AMO_3", 12.0, ((10.0, "S_TAN", 4.5),), 200.0, ("DO", "N2O")),
    "an_hb_1": Assay("AN_HB_1", 0.0, ((0.0, "S_S", 50.0), (0.0, "S_TAN", 1.0), (5.0, "S_N2O", 2.0)), 104.0,
                     ("N2O",)),
    "an_hb_2": Assay("AN_HB_2", 0.0, ((0.0, "S_S", 80.0), (0.0, "S_TAN", 1.0), (5.0, "S_N2O", 1.5)), 120.0,
                     ("N2O",)),
    "nd_1": Assay("ND_1", 10.0, ((0.0, "S_TNO2", 3.0), (5.0, "S_TAN", 4.0)), 142.0, ("N2O",)),
    "nd_2": Assay("ND_2", 8.0, ((0.0, "S_TNO2", 20.0), (5.0, "S_TAN", 4.0)), 107.0, ("N2O",)),
    "an_aob_1": Assay("AN_AOB_1", 0.0, ((5.0, "S_NH2OH", 0.1),), 35.0, ("N2O",), initial={"S_TNO2": 1.0}),
    "val_amo_ph7": Assay("VAL_AMO_PH7", 20.0, ((10.0, "S_TAN", 4.0),), 160.0, pH=7.0),
    "val_amo_ph8": Assay("VAL_AMO_PH8", 20.0, ((10.0, "S_TAN", 4.0),), 160.0, pH=8.0),
}


def noise(n: int, sigma: float, rng: np.random.Generator, phi: float = 0.0) -> np.ndarray:
    """Zero-mean Gaussian noise with marginal std ``sigma``; AR(1) when phi > 0."""
    e = rng.standard_normal(n)
    if phi == 0.0:
        return sigma * e
    if not 0.0 <= phi < 1.0:
        raise ValueError("AR coefficient must lie in [0, 1)")
    out = np.empty(n)
    innovation = np.sqrt(1.0 - phi * phi)
    out[0] = e[0]
    for i in range(1, n):
        out[i] = phi * out[i - 1] + innovation * e[i]
    return sigma * out


def measure(experiment: Experiment, truth: ParameterSet, rng: np.random.Generator,
            phi: float = 0.0, observed=("DO",), fraction: float = NOISE_FRACTION):
    """Noisy series for each observable plus the noise-free values on the same grid."""
    traj = simulate(experiment, truth)
    t = np.arange(0.0, experiment.horizon + 1e-9, SAMPLE_INTERVAL_MIN)
    series, clean = [], {}
    for name in observed:
        y = observables(traj, name, t)
        sigma = fraction * float(np.abs(y).max())
        series.append(MeasuredSeries(name, t, y + noise(len(t), sigma, rng, phi), sigma))
        clean[name] = y
    return experiment.with_series(series), clean


def window(experiment: Experiment, mask_by_name, label: str) -> Experiment:
    """Keep only the masked points of the named series; sigma is unchanged."""
    kept = [s.subset(mask_by_name[s.name]) for s in experiment.series if s.name in mask_by_name]
    return Experiment(label, experiment.environment, experiment.initial, experiment.pulses,
                      experiment.horizon, tuple(kept), experiment.report_interval)


def _rescaled_noise(experiment, clean, name, mask, rng, fraction=NOISE_FRACTION):
    """Fresh noise scaled to the window's own maximum (a sensor range change)."""
    y = clean[name][mask]
    sigma = fraction * float(np.abs(y).max())
    t = experiment.series[0].times[mask]
    return MeasuredSeries(name, t, y + noise(len(t), sigma, rng), sigma)


def generate(out_dir: str | Path, seed: int = SEED, truth: ParameterSet | None = None) -> dict:
    """Write every dataset and return an index {dataset name: yaml file name}."""
    out_dir = Path(out_dir)
    truth = truth or calibrated_parameters()
    seeds = np.random.SeedSequence(seed).spawn(len(ASSAYS) + 2)
    index = {}

    def save(name, exp):
        save_experiment(exp, out_dir / f"{name}.yaml",
                        {s.name: f"{name}_{s.name.lower()}.csv" for s in exp.series})
        index[name] = f"{name}.yaml"

    for (key, assay), ss in zip(ASSAYS.items(), seeds):
        rng = np.random.default_rng(ss)
        base = assay.experiment()
        exp, clean = measure(base, truth, rng, observed=assay.observed)
        if not key.startswith("amo"):
            save(key, exp)
            continue
        # DO stages split on the noise-free DO; the high-DO N2O window feeds the NN stage
        do = clean["DO"]
        high = do >= HIGH_DO
        low = (do < HIGH_DO) & (do >= ANOXIC_DO)
        n = key.split("_")[1]
        save(key, window(exp, {"DO": high}, assay.label))
        if low.any():
            save(f"amo_do_{n}", window(exp, {"DO": low}, assay.label + "_DO"))
        save(f"amo_nn_{n}", base.with_series([_rescaled_noise(exp, clean, "N2O", high, rng)]))

    # Same NOB assays with slowly drifting sensor noise, for the sampling-interval study.
    for key, ss in zip(("nob_1", "nob_2"), seeds[len(ASSAYS):]):
        rng = np.random.default_rng(ss)
        exp, _ = measure(ASSAYS[key].experiment(), truth, rng, phi=AR_COEFFICIENT)
        save(f"{key}_ar", Experiment(ASSAYS[key].label + "_AR", exp.environment, exp.initial, exp.pulses,
                                     exp.horizon, exp.series, exp.report_interval))

    atomic_write_text(out_dir / "index.yaml", yaml.safe_dump(
        {"seed": seed, "noise_fraction": NOISE_FRACTION, "ar_coefficient": AR_COEFFICIENT,
         "truth": {k: truth[k] for k in truth}, "datasets": index}, sort_keys=False))
    return index


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Regenerate the synthetic assay datasets.")
    ap.add_argument("out_dir", nargs="?", default=str(Path(__file__).parent / "data" / "experiments"))
    ap.add_argument("--seed", type=int, default=SEED)
    a = ap.parse_args(argv)
    for name, f in generate(a.out_dir, a.seed).items():
        print(f"{name}: {f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
