"""Stabilize unknown linear systems by policy gradient on a growing discount factor."""

from .linear_system import BoundedDistribution, CostModel, LinearSystem, Simulator, random_system
from .rollout import EvalConfig, Setting
from .stabilizer import GradConfig, JbarPolicy, Mode, StabilizationError, StabilizerConfig, run

__version__ = "0.1.0"

__all__ = [
    "BoundedDistribution",
    "CostModel",
    "EvalConfig",
    "GradConfig",
    "JbarPolicy",
    "LinearSystem",
    "Mode",
    "Setting",
    "Simulator",
    "StabilizationError",
    "StabilizerConfig",
    "random_system",
    "run",
]
