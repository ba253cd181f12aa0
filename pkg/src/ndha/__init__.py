"""Simulation and calibration toolkit for the NDHA nitrous-oxide model."""

from .params import ParameterSet, load_parameters, temperature_correct
from .model import COMPONENTS, PROCESSES, Environment, make_state, speciate

__all__ = [
    "COMPONENTS", "PROCESSES", "Environment", "ParameterSet", "load_parameters",
    "make_state", "speciate", "temperature_correct",
]
__version__ = "0.1.0"
