"""Injection plans, their execution in the simulator and execution reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..dynamics import InjectionEvent, PhysicalParams, Simulator, SystemState
from ..exceptions import DynamicsHalted
from ..geometry import DomainSpec

PLAN_FORMAT = "diskbath-plan/1"


def injection_for_velocity(tau: float, xi: float, vx: float, vy: float, side: str = "left") -> InjectionEvent:
    """Injection record producing velocity ``(vx, vy)`` at entry height ``xi``."""
    s = math.hypot(vx, vy)
    if side == "left":
        delta = math.atan2(-vy, vx)
    else:
        delta = math.atan2(-vy, -vx)
    return InjectionEvent(tau, xi, delta, s, side)


@dataclass
class PlanReport:
    success: bool
    final_state: Optional[SystemState] = None
    roster: Dict[int, int] = field(default_factory=dict)    # disk -> hits by planned particles
    exit_times: Dict[int, float] = field(default_factory=dict)
    residual: float = float("nan")
    halted: Optional[str] = None
    tangential_stops: int = 0
    trapped: int = 0
    reasons: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"success": self.success, "roster": {str(k): v for k, v in sorted(self.roster.items())},
             "exit_times": {str(k): v for k, v in self.exit_times.items()},
             "residual": self.residual, "halted": self.halted,
             "tangential_stops": self.tangential_stops, "trapped": self.trapped,
             "reasons": list(self.reasons)}
        if self.final_state is not None:
            d["final_state"] = self.final_state.to_dict()
        return d


@dataclass
class InjectionPlan:
    injections: List[InjectionEvent]
    objective: dict
    t_start: float
    budget: float
    assumptions: List[str] = field(default_factory=list)
    report: Optional[PlanReport] = None
    info: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return self.t_start + self.budget

    @property
    def max_speed(self) -> float:
        return max((ev.s for ev in self.injections), default=0.0)

    def to_dict(self) -> dict:
        d = {"format": PLAN_FORMAT, "objective": self.objective, "t_start": self.t_start,
             "budget": self.budget, "assumptions": self.assumptions,
             "injections": [ev._asdict() for ev in self.injections], "info": self.info}
        if self.report is not None:
            d["report"] = self.report.to_dict()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionPlan":
        if d.get("format") != PLAN_FORMAT:
            raise ValueError(f"not a plan ({d.get('format')!r})")
        inj = [InjectionEvent(**ev) for ev in d["injections"]]
        return cls(inj, d["objective"], d["t_start"], d["budget"], d.get("assumptions", []),
                   None, d.get("info", {}))


def execute(injections, state: SystemState, dom: DomainSpec, params: PhysicalParams,
            t_end: float, record: bool = True) -> Simulator:
    """Run ``state`` forward to ``t_end`` with the given injections.

    A halt is not raised; it is left in ``sim.halted``.
    """
    sim = Simulator(dom, params, state.copy(), injections=injections, record=record)
    try:
        sim.run(t_end)
    except DynamicsHalted:
        pass
    return sim


def planned_ids(sim: Simulator, resident_ids) -> set:
    return {rec.particle for rec in sim.log if rec.kind == "injection"} - set(resident_ids)


def roster_of(sim: Simulator, ids) -> Dict[int, int]:
    out: Dict[int, int] = {}
    for rec in sim.log:
        if rec.kind == "disk" and rec.particle in ids:
            out[rec.disk] = out.get(rec.disk, 0) + 1
    return out


def exit_times_of(sim: Simulator, ids) -> Dict[int, float]:
    return {rec.particle: rec.time for rec in sim.log if rec.kind == "exit" and rec.particle in ids}
