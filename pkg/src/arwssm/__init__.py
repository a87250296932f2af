"""Activated random walks and stochastic sandpiles on Z^d.

Discrete (instruction-field) stabilization, event-driven continuous-time
dynamics, barrier certificates of fixation on Z, and Monte Carlo campaigns.
"""

__version__ = "0.1.0"

from .engine import Odometer, Policy, StabilizationResult, enforce_activation, stabilize
from .lattice import (
    Box,
    Configuration,
    InstructionField,
    JumpKernel,
    Model,
    ParticleState,
    sample_poisson_config,
)

__all__ = [
    "Box",
    "Configuration",
    "InstructionField",
    "JumpKernel",
    "Model",
    "Odometer",
    "ParticleState",
    "Policy",
    "StabilizationResult",
    "enforce_activation",
    "sample_poisson_config",
    "stabilize",
]
