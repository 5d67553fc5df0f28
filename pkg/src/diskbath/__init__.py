"""Open billiard of rotating disks between two heat baths.

Event-driven dynamics, Poisson heat baths, equilibrium statistics,
closed-form injection and disk-response maps, and constructive control
planners.
"""

from .baths import BathSpec, equilibrium_bath
from .dynamics import (DiskState, InjectionEvent, ParticleState, PhysicalParams, Simulator,
                       SystemState)
from .geometry import DomainSpec

__version__ = "0.1.0"

__all__ = ["BathSpec", "equilibrium_bath", "DiskState", "InjectionEvent", "ParticleState",
           "PhysicalParams", "Simulator", "SystemState", "DomainSpec", "__version__"]
