"""Constructive planners: disk spin control, proper paths and flushing."""

from .flush import admissibility, first_contacts, plan_flush
from .omega import (build_set_omega, outgoing_along, plan_set_disk_state, plan_set_omega,
                    required_omega, required_omega_tangential)
from .paths import PathSpec, Vertex, delta_star, proper_path_from, validate_proper_path
from .plans import InjectionPlan, PlanReport, execute, injection_for_velocity

__all__ = ["admissibility", "first_contacts", "plan_flush", "build_set_omega", "outgoing_along",
           "plan_set_disk_state", "plan_set_omega", "required_omega", "required_omega_tangential",
           "PathSpec", "Vertex", "delta_star", "proper_path_from", "validate_proper_path",
           "InjectionPlan", "PlanReport", "execute", "injection_for_velocity"]
