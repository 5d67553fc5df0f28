"""Flush planner: drive an admissible state to the empty state.

Each resident particle is given a proper path from its first disk contact
to an opening (grazing first contacts are passed straight through by
matching the disk's surface speed to the particle's tangential speed).
Every disk contact on these paths then needs one disk spin at one time.
The spins are set by :func:`build_set_omega` constructions placed in the
gaps between consecutive contacts; contacts closer together than
``min_window`` share the preceding gap, one slice per disk in decreasing
disk order.  The free choices in the paths are redrawn when two contacts
with the same disk fall into one gap or when the executed plan deviates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..dynamics import (SIMULTANEITY_TOL, PhysicalParams, Simulator, SystemState,
                        classify_tangential_stop, is_trapped)
from ..exceptions import (BudgetTooTight, DynamicsHalted, Infeasible, NotAdmissible,
                          PlanningError, PlanSearchExhausted)
from ..geometry import DISK, EXIT_LEFT, EXIT_RIGHT, DomainSpec, contact_frame, next_boundary_event
from .omega import DEFAULT_SPEED_CAP, _Retry, _check_eta, build_set_omega, outgoing_along, required_omega
from .paths import DISK_V, PathSpec, proper_path_from, validate_proper_path
from .plans import InjectionPlan, PlanReport, execute, exit_times_of, roster_of

DEFAULT_RETRIES = 64
MIN_WINDOW = 1e-3
OMEGA_TOL = 1e-9


@dataclass
class FirstContact:
    pid: object
    time: float                 # absolute
    kind: str                   # "exit" or "disk"
    disk: Optional[int] = None
    point: tuple = ()
    velocity: tuple = ()
    grazing: bool = False


@dataclass
class Requirement:
    time: float                 # planned absolute contact time
    disk: int
    pid: object
    keep_straight: bool
    path: Optional[PathSpec] = None
    vertex: int = 0             # index of the contact in ``path``


def first_contacts(state: SystemState, dom: DomainSpec, max_walls: int = 100000):
    """Free flight of every particle to its first disk contact or exit."""
    out = []
    for p in state.particles:
        q, v, t = tuple(p.q), tuple(p.v), state.time
        if v == (0.0, 0.0):
            out.append(FirstContact(p.id, math.inf, "stuck"))
            continue
        for _ in range(max_walls):
            ev = next_boundary_event(q, v, dom)
            t += ev.time
            if ev.kind in (EXIT_LEFT, EXIT_RIGHT):
                out.append(FirstContact(p.id, t, "exit", point=ev.point, velocity=v))
                break
            if ev.kind == DISK:
                out.append(FirstContact(p.id, t, "disk", ev.disk, ev.point, v, ev.grazing))
                break
            q, v = ev.point, (v[0], -v[1])
        else:
            out.append(FirstContact(p.id, math.inf, "stuck"))
    return out


def admissibility(state: SystemState, dom: DomainSpec, params: PhysicalParams) -> List[str]:
    """Reasons why ``state`` is not admissible (empty list if it is)."""
    bad = []
    fcs = first_contacts(state, dom)
    for p, fc in zip(state.particles, fcs):
        if is_trapped(p, dom) or fc.kind == "stuck":
            bad.append(f"particle {p.id} is trapped")
        elif fc.kind == "disk" and fc.grazing:
            fr = contact_frame(fc.point, fc.velocity, fc.disk, dom)
            w = state.disks[fc.disk - 1].omega
            if classify_tangential_stop(fr.v_t, dom.disk_radius * w, params.eta) or fc.velocity[0] == 0.0:
                bad.append(f"particle {p.id} stops tangentially on disk {fc.disk}")
    disk_fcs = sorted((fc for fc in fcs if fc.kind == "disk"), key=lambda f: f.time)
    for a, b in zip(disk_fcs, disk_fcs[1:]):
        if a.disk == b.disk and b.time - a.time <= SIMULTANEITY_TOL:
            bad.append(f"particles {a.pid} and {b.pid} reach disk {a.disk} together")
    return bad


def _routes(state, dom, params, fcs, rng, randomize):
    """Contact requirements of all residents along freshly drawn paths."""
    reqs: List[Requirement] = []
    paths = {}
    r = rng if randomize else None
    for fc in fcs:
        if fc.kind != "disk":
            continue
        t, pt, v, j, graze = fc.time, fc.point, fc.velocity, fc.disk, fc.grazing
        # grazing contacts: the disk matches the tangential speed and the
        # particle goes on straight
        for _ in range(1000):
            if not graze:
                break
            reqs.append(Requirement(t, j, fc.pid, True))
            q = pt
            while True:
                ev = next_boundary_event(q, v, dom, exclude_disk=j)
                t += ev.time
                if ev.kind in (EXIT_LEFT, EXIT_RIGHT):
                    j = None
                    break
                if ev.kind == DISK:
                    pt, j, graze = ev.point, ev.disk, ev.grazing
                    break
                q, v = ev.point, (v[0], -v[1])
                j = None
            if j is None:
                break
        if j is None:
            continue
        path = proper_path_from(pt, dom, velocity=v, rng=r)
        ok, why = validate_proper_path(path, dom, params)
        if not ok:
            raise Infeasible(f"path for particle {fc.pid} is not proper: {why[0]}")
        paths[fc.pid] = path
        times = path.times(dom, t, params.eta)
        for i, vert in enumerate(path.vertices):
            if vert.kind == DISK_V:
                reqs.append(Requirement(times[i], vert.disk, fc.pid, False, path, i))
    reqs.sort(key=lambda q: q.time)
    return reqs, paths


def _clusters(reqs, t0, min_window):
    """Group contacts so each group is preceded by a gap of at least ``min_window``."""
    groups, prev = [], t0
    for rq in reqs:
        if groups and rq.time - prev < min_window:
            groups[-1][1].append(rq)
        else:
            groups.append((prev, [rq]))
        prev = rq.time
    out = []
    for start, members in groups:
        disks = [m.disk for m in members]
        if len(set(disks)) != len(disks):
            raise _Retry(f"two contacts with disk {max(disks, key=disks.count)} without a gap")
        if members[0].time - start < min_window:
            raise _Retry(f"only {members[0].time - start:.3g} before the contact at {members[0].time:.6g}")
        out.append((start, members))
    return out


def _clone(sim: Simulator, record=True) -> Simulator:
    c = Simulator(sim.dom, sim.params, sim.state(), record=record)
    c._next_id = sim._next_id
    c.last_contact = list(sim.last_contact)
    return c


def _required_rw(master: Simulator, rq: Requirement, horizon: float):
    """Surface speed the disk needs at the resident's actual arrival."""
    probe = _clone(master, record=False)
    while True:
        rec = probe.step(horizon)
        if rec.kind == "none":
            raise _Retry(f"particle {rq.pid} did not reach disk {rq.disk} in time")
        if rec.particle != rq.pid:
            continue
        if rec.kind == "exit":
            raise _Retry(f"particle {rq.pid} left before its contact with disk {rq.disk}")
        if rec.kind == "disk":
            if rec.disk != rq.disk:
                raise _Retry(f"particle {rq.pid} hit disk {rec.disk} instead of {rq.disk}")
            fr = contact_frame(rec.point, rec.v_before, rq.disk, master.dom)
            if rq.keep_straight:
                return fr.v_t
            nxt = rq.path.vertices[rq.vertex + 1].point
            d = (nxt[0] - rec.point[0], nxt[1] - rec.point[1])
            try:
                u = outgoing_along(rec.v_before, fr.theta, d)
                return required_omega(rec.v_before, fr.theta, u, master.params.eta)
            except Infeasible as exc:
                raise _Retry(f"particle {rq.pid} cannot be steered at disk {rq.disk}: {exc}")


def _set_disk(master, j, omega, a, b, cap, clearance, method):
    """Doubling search for one spin construction, applied to ``master`` on success."""
    S = 1.0
    last = ""
    while S <= cap:
        trial = _clone(master)
        try:
            inj, vmax = build_set_omega(trial, j, omega, a, b, S, cap, clearance, method)
        except (_Retry, DynamicsHalted) as exc:
            last = str(exc)
            S *= 2.0
            continue
        ok = abs(trial.disk_omega[j - 1] - omega) <= OMEGA_TOL and not trial.tangential_stops \
            and trial.halted is None
        planned = {rec.particle for rec in trial.log if rec.kind == "injection"}
        touched = {rec.disk for rec in trial.log if rec.kind == "disk" and rec.particle in planned}
        if ok and all(d <= j for d in touched):
            for ev in inj:
                master.schedule(ev)
            master.run(b)
            return inj, vmax
        last = "spin construction missed its target"
        S *= 2.0
    raise BudgetTooTight(f"setting disk {j} in [{a:.6g}, {b:.6g}]: {last}")


def _attempt(state, dom, params, fcs, rng, randomize, min_window, cap, clearance, method):
    reqs, paths = _routes(state, dom, params, fcs, rng, randomize)
    groups = _clusters(reqs, state.time, min_window)
    master = Simulator(dom, params, state.copy(), record=True)
    injections, schedule, vmax = [], [], 0.0
    for start, members in groups:
        a = max(master.time, start)
        b = members[0].time
        span = b - a
        # leave a margin on both sides of the gap for timing drift
        a, b = a + 0.02 * span, b - 0.02 * span
        members = sorted(members, key=lambda m: -m.disk)
        n = len(members)
        master.run(a)
        for i, rq in enumerate(members):
            lo, hi = a + i * (b - a) / n, a + (i + 1) * (b - a) / n
            rw = _required_rw(master, rq, rq.time + span)
            omega = rw / dom.disk_radius
            inj, vm = _set_disk(master, rq.disk, omega, lo, hi, cap, clearance, method)
            injections.extend(inj)
            vmax = max(vmax, vm)
            schedule.append({"disk": rq.disk, "omega": omega, "window": [lo, hi],
                             "particle": rq.pid, "contact_time": rq.time,
                             "keep_straight": rq.keep_straight, "injections": len(inj)})
    return injections, schedule, paths, reqs, vmax


def _exit_horizon(state, dom, paths, reqs):
    t = max([state.time] + [r.time for r in reqs])
    for fc in first_contacts(state, dom):
        if fc.kind == "exit":
            t = max(t, fc.time)
    for pid, path in paths.items():
        t = max(t, max(r.time for r in reqs if r.pid == pid) + sum(path.lengths()) /
                min(path.kinematics(dom)[0]))
    return t + 1.0


def _verify(injections, state, dom, params, t_end, reqs):
    sim = execute(injections, state, dom, params, t_end)
    reasons = []
    if sim.halted is not None:
        reasons.append(f"halted: {sim.halted.reason}")
    final = sim.state()
    if final.particles:
        reasons.append(f"{len(final.particles)} particles left at t={t_end:.6g}")
    if sim.tangential_stops:
        reasons.append("tangential stop")
    if sim.trapped:
        reasons.append("trapped particle")
    residents = {p.id for p in state.particles}
    got = sorted((rec.particle, rec.disk) for rec in sim.log
                 if rec.kind == "disk" and rec.particle in residents)
    want = sorted((r.pid, r.disk) for r in reqs)
    if got != want:
        reasons.append("resident contacts differ from the plan")
    ids = {rec.particle for rec in sim.log if rec.kind == "injection"} | residents
    rep = PlanReport(not reasons, final, roster_of(sim, ids), exit_times_of(sim, ids),
                     float(len(final.particles)), sim.halted.reason if sim.halted else None,
                     len(sim.tangential_stops), len(sim.trapped), reasons)
    return rep


def _robust(injections, state, dom, params, t_end, eps, rng, probes=4):
    """Executions from states moved by up to ``eps`` still end empty."""
    for _ in range(probes):
        moved = state.copy()
        for p in moved.particles:
            dq = rng.normal(size=2)
            dq *= eps * rng.random() / np.linalg.norm(dq)
            q = (p.q[0] + dq[0], p.q[1] + dq[1])
            if dom.in_interior(q):
                p.q = q
        sim = execute(injections, moved, dom, params, t_end, record=False)
        if sim.halted is not None or sim.state().particles or sim.tangential_stops:
            return False
    return True


def plan_flush(state: SystemState, dom: DomainSpec, params: PhysicalParams,
               eps_target: float = 0.0, rng=None, retries: int = DEFAULT_RETRIES,
               min_window: float = MIN_WINDOW, speed_cap: float = DEFAULT_SPEED_CAP,
               clearance: float = 20.0, method: str = "auto") -> InjectionPlan:
    """Injection plan after which no particle is left.

    The first attempt uses the default path choices; later attempts redraw
    them from ``rng``.  With ``eps_target > 0`` a plan is only accepted if
    it also empties states whose particle positions are moved by up to
    ``eps_target``.  Raises :class:`NotAdmissible` or
    :class:`PlanSearchExhausted` (with the reasons of every attempt).
    """
    _check_eta(params)
    bad = admissibility(state, dom, params)
    if bad:
        raise NotAdmissible("; ".join(bad))
    rng = np.random.default_rng() if rng is None else rng
    fcs = first_contacts(state, dom)
    reasons = []
    for attempt in range(retries):
        try:
            injections, schedule, paths, reqs, vmax = _attempt(
                state, dom, params, fcs, rng, attempt > 0, min_window, speed_cap, clearance, method)
        except (PlanningError, DynamicsHalted) as exc:
            reasons.append(f"attempt {attempt}: {exc}")
            continue
        t_end = _exit_horizon(state, dom, paths, reqs)
        rep = _verify(injections, state, dom, params, t_end, reqs)
        if rep.success and eps_target > 0 and not _robust(injections, state, dom, params, t_end,
                                                          eps_target, rng):
            rep.success = False
            rep.reasons.append(f"not robust to {eps_target:g} position changes")
        if not rep.success:
            reasons.append(f"attempt {attempt}: " + "; ".join(rep.reasons))
            continue
        injections.sort(key=lambda ev: ev.tau)
        return InjectionPlan(
            injections, {"kind": "flush", "eps_target": eps_target}, state.time, t_end - state.time,
            ["no other injections during the plan"], rep,
            {"attempts": attempt + 1, "max_speed": vmax, "schedule": schedule,
             "paths": {str(k): p.to_dict() for k, p in paths.items()}})
    raise PlanSearchExhausted(f"no flush plan after {retries} attempts", reasons)
