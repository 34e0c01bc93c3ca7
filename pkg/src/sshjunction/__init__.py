"""Ehrenfest simulation of laser-driven rectification in SSH molecular wires."""

from .dynamics import (
    IntegratorConfig,
    OrbitalSet,
    TrajectoryState,
    initial_state,
    integrate_nonmarkovian,
    integrate_trajectory,
)
from .ensemble import EnsembleConfig, phase_sweep, run_ensemble
from .field import FieldParams, field_amplitude
from .ground_state import normal_modes, optimize_geometry, sample_wigner
from .model import HBAR, LatticeState, SystemParams
from .observables import TrajectoryResult, rectification_and_efficiency

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "EnsembleConfig",
    "FieldParams",
    "IntegratorConfig",
    "LatticeState",
    "OrbitalSet",
    "SystemParams",
    "TrajectoryResult",
    "TrajectoryState",
    "field_amplitude",
    "initial_state",
    "integrate_nonmarkovian",
    "integrate_trajectory",
    "normal_modes",
    "optimize_geometry",
    "phase_sweep",
    "rectification_and_efficiency",
    "run_ensemble",
    "sample_wigner",
]
