"""Monte Carlo machinery: exact event-driven simulation, closed-form
transition sampling for reducible models, and fluctuation-series extraction.
"""

from .engine import SimConfig, Trajectory, simulate_path
from .exactlaw import UniformStepLaw
from .series import (
    ReplicaSet,
    estimate_W,
    fluctuation_matrix,
    fluctuation_series,
    martingale_path,
    simulate_ensemble,
)

__all__ = [
    "SimConfig",
    "Trajectory",
    "simulate_path",
    "UniformStepLaw",
    "ReplicaSet",
    "simulate_ensemble",
    "martingale_path",
    "estimate_W",
    "fluctuation_series",
    "fluctuation_matrix",
]
