"""Collision law and exact event-driven evolution of the open system.

Particles fly on straight lines, reflect specularly off the horizontal
walls and exchange tangential momentum with freely rotating disks.  Between
events everything is advanced in closed form, so the only numerical error
is floating-point rounding at the events themselves.

Conventions (shared with :mod:`diskbath.geometry`): at a contact with outward
normal ``n`` and tangent ``t = (n_y, -n_x)``, ``v_t = v . t`` and
``v_perp = -v . n``.  ``R * omega`` is the surface velocity of the disk along
the same tangent, so ``omega > 0`` means clockwise rotation in the usual
picture, and the disk angle advances as ``phi + omega * dt``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from . import geometry as geo
from .exceptions import DynamicsHalted, SimultaneousSameDisk
from .geometry import DomainSpec

TWO_PI = 2.0 * math.pi
SIMULTANEITY_TOL = 1e-12
STOP_RTOL = 1e-12

LOG_FORMAT = "diskbath-eventlog/1"
SNAPSHOT_FORMAT = "diskbath-state/1"


# ---------------------------------------------------------------- data types

@dataclass(frozen=True)
class PhysicalParams:
    eta: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta!r}")
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise ValueError(f"mass must be positive and finite, got {self.mass!r}")

    def inertia(self, radius: float) -> float:
        """Moment of inertia of one disk, ``eta * m * R**2``."""
        return self.eta * self.mass * radius * radius


@dataclass
class ParticleState:
    q: Tuple[float, float]
    v: Tuple[float, float]
    id: int = 0

    @property
    def speed(self) -> float:
        return math.hypot(*self.v)


@dataclass
class DiskState:
    phi: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        self.phi = wrap_angle(self.phi)


@dataclass
class SystemState:
    time: float = 0.0
    particles: List[ParticleState] = field(default_factory=list)
    disks: List[DiskState] = field(default_factory=list)

    @classmethod
    def empty(cls, dom: DomainSpec, omegas=None, phis=None, time=0.0) -> "SystemState":
        n = dom.n_disks
        omegas = [0.0] * n if omegas is None else list(omegas)
        phis = [0.0] * n if phis is None else list(phis)
        return cls(time, [], [DiskState(p, w) for p, w in zip(phis, omegas)])

    @property
    def k(self) -> int:
        return len(self.particles)

    def copy(self) -> "SystemState":
        return SystemState(self.time,
                           [ParticleState(p.q, p.v, p.id) for p in self.particles],
                           [DiskState(d.phi, d.omega) for d in self.disks])

    def to_dict(self) -> dict:
        return {
            "format": SNAPSHOT_FORMAT,
            "time": self.time,
            "particles": [{"id": p.id, "q": list(p.q), "v": list(p.v)} for p in self.particles],
            "disks": [{"phi": d.phi, "omega": d.omega} for d in self.disks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemState":
        fmt = d.get("format", SNAPSHOT_FORMAT)
        if fmt != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported snapshot format {fmt!r}")
        parts = [ParticleState(tuple(map(float, p["q"])), tuple(map(float, p["v"])), p.get("id", i))
                 for i, p in enumerate(d.get("particles", []))]
        disks = [DiskState(float(raw["phi"]), float(raw["omega"])) for raw in d["disks"]]
        return cls(float(d["time"]), parts, disks)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SystemState":
        return cls.from_dict(json.loads(text))

    def same_as(self, other: "SystemState") -> bool:
        """Equality treating particles as an unordered set of (q, v)."""
        if self.time != other.time or len(self.disks) != len(other.disks):
            return False
        if any(a.phi != b.phi or a.omega != b.omega for a, b in zip(self.disks, other.disks)):
            return False
        key = lambda p: (p.q, p.v)
        return sorted(map(key, self.particles)) == sorted(map(key, other.particles))


class InjectionEvent(NamedTuple):
    """One emission from a bath: time, entry height, entry angle, speed."""

    tau: float
    xi: float
    delta: float
    s: float
    side: str = "left"


@dataclass
class EventRecord:
    time: float
    kind: str                       # wall | disk | exit | injection | halt | none
    particle: Optional[int] = None
    where: Optional[str] = None     # wall: top/bottom, exit/injection: left/right, halt: reason
    disk: Optional[int] = None
    point: Optional[Tuple[float, float]] = None
    v_before: Optional[Tuple[float, float]] = None
    v_after: Optional[Tuple[float, float]] = None
    disk_before: Optional[Tuple[float, float]] = None
    disk_after: Optional[Tuple[float, float]] = None
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = {"t": self.time, "kind": self.kind}
        for name in ("particle", "where", "disk", "point", "v_before", "v_after",
                     "disk_before", "disk_after"):
            val = getattr(self, name)
            if val is not None:
                d[name] = list(val) if isinstance(val, tuple) else val
        if self.flags:
            d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        tup = lambda x: None if x is None else tuple(x)
        return cls(d["t"], d["kind"], d.get("particle"), d.get("where"), d.get("disk"),
                   tup(d.get("point")), tup(d.get("v_before")), tup(d.get("v_after")),
                   tup(d.get("disk_before")), tup(d.get("disk_after")), tuple(d.get("flags", ())))


# ---------------------------------------------------------------- pure laws

def wrap_angle(phi: float) -> float:
    r = math.fmod(phi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    if r >= TWO_PI:  # fmod of a tiny negative number can round up
        r = 0.0
    return r


def reflect_wall(v):
    """Specular reflection off a horizontal wall."""
    return (v[0], -v[1])


def collide_disk(v_t: float, v_perp: float, R_omega: float, eta: float):
    """Exchange law at a particle-disk contact.

    Returns ``(v_t', v_perp', R_omega')`` with ``v_perp' = -v_perp``.
    Energy ``v_t**2 + eta * (R omega)**2`` and ``v_t + eta * R omega`` are
    conserved; for ``eta == 1`` the tangential components are swapped exactly.
    """
    s = 1.0 + eta
    vt_new = ((1.0 - eta) * v_t + 2.0 * eta * R_omega) / s
    rw_new = (2.0 * v_t + (eta - 1.0) * R_omega) / s
    return vt_new, -v_perp, rw_new


def classify_tangential_stop(v_t: float, R_omega: float, eta: float) -> bool:
    """True if a grazing contact leaves the particle at rest.

    With ``v_perp = 0`` the particle keeps only its tangential component,
    which the exchange law sends to zero when ``2 eta R omega = (eta - 1) v_t``.
    """
    scale = max(abs(v_t), abs(R_omega))
    if scale == 0.0:
        return True
    return abs((1.0 - eta) * v_t + 2.0 * eta * R_omega) <= STOP_RTOL * (1.0 + eta) * scale


def is_trapped(p: ParticleState, dom: DomainSpec) -> bool:
    """Particle that will never reach a disk or an exit again without help.

    Either it is at rest, or it moves exactly vertically inside one of the
    vertical bands that contain no disk.
    """
    vx, vy = p.v
    if vx == 0.0 and vy == 0.0:
        return True
    if vx != 0.0:
        return False
    x = p.q[0]
    if not 0.0 <= x <= dom.width:
        return False
    gap = 1.0 - dom.disk_radius
    # bands are centred on the even abscissae 0, 2, ..., 2N
    j = round(x / 2.0)
    return abs(x - 2.0 * j) <= gap


def injection_velocity(side: str, delta: float, s: float):
    if side == "left":
        return (s * math.cos(delta), -s * math.sin(delta))
    if side == "right":
        return (-s * math.cos(delta), -s * math.sin(delta))
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


# ---------------------------------------------------------------- simulator

class _Particle:
    __slots__ = ("pid", "x", "y", "t0", "vx", "vy",
                 "ev_t", "ev_kind", "ev_disk", "ev_pt", "ev_graze")

    def __init__(self, pid, x, y, t0, vx, vy):
        self.pid = pid
        self.x, self.y, self.t0 = x, y, t0
        self.vx, self.vy = vx, vy


class Simulator:
    """Event-driven evolution of one system state.

    Parameters
    ----------
    sources : iterable of objects with ``peek()`` returning the next
        :class:`InjectionEvent` (or ``None``) and ``pop()`` consuming it.
        Used for the stochastic baths.
    injections : explicit, deterministic injections (e.g. a control plan).
    record : keep :class:`EventRecord` objects in ``self.log``.
    sink : optional callable receiving every record (e.g. a JSONL writer).
    """

    def __init__(self, dom: DomainSpec, params: PhysicalParams, state: Optional[SystemState] = None,
                 sources: Sequence = (), injections: Iterable[InjectionEvent] = (),
                 record: bool = True, sink: Optional[Callable[[EventRecord], None]] = None):
        self.dom = dom
        self.params = params
        self.R = dom.disk_radius
        state = state if state is not None else SystemState.empty(dom)
        if len(state.disks) != dom.n_disks:
            raise ValueError(f"state has {len(state.disks)} disks, domain has {dom.n_disks}")
        self.time = float(state.time)
        self.disk_phi0 = [d.phi for d in state.disks]
        self.disk_omega = [d.omega for d in state.disks]
        self.disk_t0 = [self.time] * dom.n_disks
        self.last_contact = [-math.inf] * dom.n_disks
        self.particles: List[_Particle] = []
        self._next_id = 0
        for p in state.particles:
            self._add(p.id, p.q[0], p.q[1], p.v[0], p.v[1], self.time)
            self._next_id = max(self._next_id, int(p.id) + 1) if isinstance(p.id, int) else self._next_id
        self.sources = list(sources)
        self._sched: list = []
        self._sched_n = 0
        for ev in injections:
            self.schedule(ev)
        self.record = record
        self.sink = sink
        self.log: List[EventRecord] = []
        self.halted: Optional[DynamicsHalted] = None
        self.counts = {"wall": 0, "disk": 0, "exit_left": 0, "exit_right": 0,
                       "inject_left": 0, "inject_right": 0}
        self.disk_hits = [0] * dom.n_disks
        self.tangential_stops: List[int] = []
        self.trapped: set = set()
        for p in self.particles:
            self._check_trapped(p)

    # -- bookkeeping ---------------------------------------------------

    def schedule(self, ev: InjectionEvent):
        heapq.heappush(self._sched, (ev.tau, self._sched_n, ev))
        self._sched_n += 1

    def _add(self, pid, x, y, vx, vy, t, exclude=None):
        p = _Particle(pid, x, y, t, vx, vy)
        self._predict(p, exclude)
        self.particles.append(p)
        return p

    def _predict(self, p: _Particle, exclude=None):
        if p.vx == 0.0 and p.vy == 0.0:
            p.ev_t, p.ev_kind, p.ev_disk, p.ev_pt, p.ev_graze = math.inf, None, None, None, False
            return
        ev = geo.next_boundary_event((p.x, p.y), (p.vx, p.vy), self.dom, exclude)
        p.ev_t = p.t0 + ev.time
        p.ev_kind, p.ev_disk, p.ev_pt, p.ev_graze = ev.kind, ev.disk, ev.point, ev.grazing

    def _check_trapped(self, p: _Particle):
        if p.pid not in self.trapped and is_trapped(
                ParticleState((p.x, p.y), (p.vx, p.vy), p.pid), self.dom):
            self.trapped.add(p.pid)

    def disk_state(self, j: int, t: Optional[float] = None) -> DiskState:
        """State of disk ``j`` (1-based) at time ``t`` (default: now)."""
        t = self.time if t is None else t
        i = j - 1
        phi = wrap_angle(self.disk_phi0[i] + self.disk_omega[i] * (t - self.disk_t0[i]))
        return DiskState(phi, self.disk_omega[i])

    def state(self) -> SystemState:
        t = self.time
        parts = [ParticleState((p.x + p.vx * (t - p.t0), p.y + p.vy * (t - p.t0)), (p.vx, p.vy), p.pid)
                 for p in self.particles]
        return SystemState(t, parts, [self.disk_state(j) for j in range(1, self.dom.n_disks + 1)])

    @property
    def k(self) -> int:
        return len(self.particles)

    def _emit(self, rec: EventRecord):
        if self.record:
            self.log.append(rec)
        if self.sink is not None:
            self.sink(rec)

    # -- event selection ------------------------------------------------

    def _next_particle_event(self):
        best = None
        tmin = math.inf
        for p in self.particles:
            if p.ev_t < tmin:
                tmin = p.ev_t
        if tmin == math.inf:
            return None
        cands = [p for p in self.particles if p.ev_t <= tmin + geo.TIE_TOL]
        if len(cands) == 1:
            return cands[0]
        best = min(cands, key=lambda p: (geo.KIND_RANK[p.ev_kind], p.ev_disk or 0, p.ev_t, str(p.pid)))
        return best

    def _next_injection(self):
        t_best, src_best = math.inf, None
        for src in self.sources:
            ev = src.peek()
            if ev is not None and ev.tau < t_best:
                t_best, src_best = ev.tau, src
        if self._sched and self._sched[0][0] < t_best:
            t_best, src_best = self._sched[0][0], None
        return t_best, src_best

    def next_event_time(self) -> float:
        p = self._next_particle_event()
        tp = p.ev_t if p is not None else math.inf
        return min(tp, self._next_injection()[0])

    # -- stepping --------------------------------------------------------

    def step(self, horizon: float = math.inf) -> EventRecord:
        """Process the earliest event at or before ``horizon``.

        Returns the record, or a record of kind ``none`` after advancing the
        clock to ``horizon`` when nothing happens before it.
        """
        if self.halted is not None:
            raise self.halted
        p = self._next_particle_event()
        tp = p.ev_t if p is not None else math.inf
        ti, src = self._next_injection()
        if min(tp, ti) > horizon:
            if horizon < self.time:
                raise ValueError(f"horizon {horizon} is before current time {self.time}")
            self.time = float(horizon)
            return EventRecord(self.time, "none")
        if tp <= ti:
            return self._boundary(p)
        if src is None:
            ev = heapq.heappop(self._sched)[2]
        else:
            ev = src.pop()
        return self._inject(ev)

    def run(self, t_end: float, max_events: Optional[int] = None) -> int:
        """Advance to ``t_end``; returns the number of events processed."""
        n = 0
        while True:
            rec = self.step(t_end)
            if rec.kind == "none":
                return n
            n += 1
            if max_events is not None and n >= max_events:
                return n

    def _inject(self, ev: InjectionEvent) -> EventRecord:
        t = ev.tau
        if t < self.time:
            raise ValueError(f"injection at {t} precedes current time {self.time}")
        self.time = t
        vx, vy = injection_velocity(ev.side, ev.delta, ev.s)
        x = 0.0 if ev.side == "left" else self.dom.width
        pid = self._next_id
        self._next_id += 1
        self._add(pid, x, ev.xi, vx, vy, t)
        self.counts["inject_" + ev.side] += 1
        rec = EventRecord(t, "injection", pid, ev.side, point=(x, ev.xi), v_after=(vx, vy))
        self._emit(rec)
        return rec

    def _boundary(self, p: _Particle) -> EventRecord:
        t = p.ev_t
        self.time = t
        kind = p.ev_kind
        pt = p.ev_pt
        v_in = (p.vx, p.vy)
        if kind in (geo.EXIT_LEFT, geo.EXIT_RIGHT):
            self.particles.remove(p)
            side = "left" if kind == geo.EXIT_LEFT else "right"
            self.counts["exit_" + side] += 1
            rec = EventRecord(t, "exit", p.pid, side, point=pt, v_before=v_in)
            self._emit(rec)
            return rec
        p.x, p.y, p.t0 = pt[0], pt[1], t
        if kind in (geo.WALL_TOP, geo.WALL_BOTTOM):
            p.vy = -p.vy
            self._predict(p)
            self.counts["wall"] += 1
            rec = EventRecord(t, "wall", p.pid, "top" if kind == geo.WALL_TOP else "bottom",
                              point=pt, v_before=v_in, v_after=(p.vx, p.vy))
            self._emit(rec)
            return rec
        return self._disk_contact(p, t, pt, v_in)

    def _disk_contact(self, p: _Particle, t, pt, v_in) -> EventRecord:
        j = p.ev_disk
        i = j - 1
        # a second contact with the same disk at the same instant is undefined
        clash = [q.pid for q in self.particles
                 if q is not p and q.ev_kind == geo.DISK and q.ev_disk == j
                 and abs(q.ev_t - t) <= SIMULTANEITY_TOL]
        if clash or t - self.last_contact[i] <= SIMULTANEITY_TOL:
            self.halted = SimultaneousSameDisk(t, {"disk": j, "particles": [p.pid] + clash})
            self._emit(EventRecord(t, "halt", p.pid, "SimultaneousSameDisk", disk=j, point=pt,
                                   v_before=v_in))
            raise self.halted
        self.last_contact[i] = t
        before = self.disk_state(j, t)
        frame = geo.contact_frame(pt, v_in, j, self.dom)
        R = self.R
        vt2, vp2, rw2 = collide_disk(frame.v_t, frame.v_perp, R * before.omega, self.params.eta)
        flags = ()
        if p.ev_graze:
            flags = ("grazing",)
            if classify_tangential_stop(frame.v_t, R * before.omega, self.params.eta):
                vx, vy = 0.0, 0.0
                flags = ("grazing", "TangentialStop")
                self.tangential_stops.append(p.pid)
            else:
                vx, vy = frame.reconstruct(vt2, vp2)
        else:
            vx, vy = frame.reconstruct(vt2, vp2)
        p.vx, p.vy = vx, vy
        self.disk_phi0[i] = before.phi
        self.disk_t0[i] = t
        self.disk_omega[i] = rw2 / R
        self._predict(p, exclude=j)
        self._check_trapped(p)
        self.counts["disk"] += 1
        self.disk_hits[i] += 1
        rec = EventRecord(t, "disk", p.pid, None, j, pt, v_in, (vx, vy),
                          (before.phi, before.omega), (before.phi, self.disk_omega[i]), flags)
        self._emit(rec)
        return rec


def step_event(state: SystemState, dom: DomainSpec, params: PhysicalParams,
               horizon: float):
    """Functional single step: returns ``(new_state, record)``.

    ``horizon`` is an absolute time.  Raises :class:`SimultaneousSameDisk`
    when the dynamics is undefined.
    """
    sim = Simulator(dom, params, state.copy())
    rec = sim.step(horizon)
    return sim.state(), rec


# ---------------------------------------------------------------- logs

class JsonlWriter:
    """Callable sink writing one JSON object per event after a header line."""

    def __init__(self, fh, meta: Optional[dict] = None):
        self.fh = fh
        header = {"format": LOG_FORMAT}
        if meta:
            header.update(meta)
        fh.write(json.dumps(header) + "\n")

    def __call__(self, rec: EventRecord):
        self.fh.write(json.dumps(rec.to_dict()) + "\n")


def read_event_log(path) -> Tuple[dict, List[EventRecord]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != LOG_FORMAT:
            raise ValueError(f"{path}: not an event log ({header.get('format')!r})")
        return header, [EventRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
