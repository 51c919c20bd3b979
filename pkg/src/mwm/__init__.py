"""Setpoint optimization and cycle simulation for multihead weighing machines."""

from mwm.errors import ConfigError, DegenerateError, InfeasibleError, MWMError, NumericalError
from mwm.machine import (
    CombinationSet,
    MachineConfig,
    Setpoints,
    combination_distribution,
    enumerate_combinations,
    integral_count,
)

__version__ = "0.1.0"

__all__ = [
    "CombinationSet",
    "ConfigError",
    "DegenerateError",
    "InfeasibleError",
    "MWMError",
    "MachineConfig",
    "NumericalError",
    "Setpoints",
    "combination_distribution",
    "enumerate_combinations",
    "integral_count",
]
