"""Equivariant filtering of chaser/target relative attitude and target angular velocity."""

from .eqf import EquivariantFilter, FilterState, GainConfig
from .ekf import ExtendedKalmanFilter
from .errors import (
    ConfigError,
    DegenerateDirections,
    LogFormatError,
    LostPositivity,
    NearPiSingularity,
    NonSkewInput,
    ReleqfError,
)
from .liegroup import AlgebraElement, GroupElement
from .model import ManifoldState, Measurement, ReferenceDirections, SystemInput
from .sim import ScenarioConfig, generate_scenario, metrics, monte_carlo, run_filter

__all__ = [
    "AlgebraElement",
    "ConfigError",
    "DegenerateDirections",
    "EquivariantFilter",
    "ExtendedKalmanFilter",
    "FilterState",
    "GainConfig",
    "GroupElement",
    "LogFormatError",
    "LostPositivity",
    "ManifoldState",
    "Measurement",
    "NearPiSingularity",
    "NonSkewInput",
    "ReferenceDirections",
    "ReleqfError",
    "ScenarioConfig",
    "SystemInput",
    "generate_scenario",
    "metrics",
    "monte_carlo",
    "run_filter",
]
