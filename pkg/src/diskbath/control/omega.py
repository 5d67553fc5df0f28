"""Planners that set a disk's angular velocity, or its full (phi, omega) state,
by injecting fast particles from the left bath (``eta = 1`` only).

Setting disk 1 is a single particle striking the disk's leftmost point; its
vertical speed becomes the disk's surface speed.  Disk ``k+1`` is set by a
particle that hits the bottom of disk ``k`` (pre-spun backwards so the
particle is thrown to the right), bounces off the bottom wall, strikes disk
``k+1`` near-radially with the requested tangential speed, returns, and is
flung out to the left by disk ``k`` (re-spun in the meantime).  Both spins of
disk ``k`` are recursive sub-plans.

The builder simulates as it goes, so each design step uses the actual disk
states left by the previous ones.  The finished plan is executed once more
from the initial state and checked.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import optimize

from ..dynamics import TWO_PI, PhysicalParams, Simulator, SystemState, wrap_angle
from ..exceptions import BudgetTooTight, DynamicsHalted, Infeasible, PlanningError
from ..geometry import DomainSpec, contact_frame
from .plans import (InjectionPlan, PlanReport, execute, exit_times_of, injection_for_velocity,
                    roster_of)

DEFAULT_SPEED_CAP = 1e6
OMEGA_TOL = 1e-9
METHODS = ("auto", "direct", "recursive")
TARGET_RATIO = 20.0  # keeps the carrier contact near radial so it returns to the lower disk


def required_omega_tangential(v_t: float, v_t_target: float, eta: float = 1.0) -> float:
    """Surface speed ``R omega`` that turns tangential speed ``v_t`` into ``v_t_target``."""
    return v_t + (1.0 + eta) / (2.0 * eta) * (v_t_target - v_t)


def required_omega(v, theta: float, u, eta: float = 1.0, rtol: float = 1e-9) -> float:
    """``R omega`` making a particle arriving with velocity ``v`` at contact angle
    ``theta`` leave with velocity ``u``.

    The normal part of ``u`` must be the reversed normal part of ``v``;
    otherwise :class:`Infeasible` is raised.
    """
    n = (math.cos(theta), math.sin(theta))
    t = (n[1], -n[0])
    v_t = v[0] * t[0] + v[1] * t[1]
    v_perp = -(v[0] * n[0] + v[1] * n[1])
    u_perp = u[0] * n[0] + u[1] * n[1]
    scale = max(math.hypot(*v), math.hypot(*u), 1e-300)
    if abs(u_perp - v_perp) > rtol * scale:
        raise Infeasible(f"outgoing normal speed {u_perp} differs from {v_perp}")
    return required_omega_tangential(v_t, u[0] * t[0] + u[1] * t[1], eta)


def outgoing_along(v, theta: float, d):
    """Outgoing velocity parallel to direction ``d`` that the exchange law can produce.

    The normal speed is fixed by the incoming velocity, so the speed along
    ``d`` is ``v_perp / (d_hat . n)``.
    """
    n = (math.cos(theta), math.sin(theta))
    v_perp = -(v[0] * n[0] + v[1] * n[1])
    dl = math.hypot(*d)
    dx, dy = d[0] / dl, d[1] / dl
    dn = dx * n[0] + dy * n[1]
    if v_perp <= 0 or dn <= 0:
        raise Infeasible("direction does not leave the disk or particle is not arriving")
    sp = v_perp / dn
    return (sp * dx, sp * dy)


class _Retry(PlanningError):
    """Internal: the current speed floor is too low for the construction."""


def _theta_for_target(R: float, r: float):
    """Contact angle on the lower-left arc of the next disk with ``g(theta) = r``.

    ``h`` is the slope ``V / U`` of the unfolded wall-bounce path from the
    bottom of one disk to the contact point on the next; ``g`` is the
    resulting tangential speed divided by ``U``.
    """
    h = lambda th: (2.0 - R + R * math.sin(th)) / (2.0 + R * math.cos(th))
    g = lambda th: math.sin(th) - math.cos(th) * h(th) - r
    th0 = -math.pi + math.atan((2.0 - R) / 2.0)
    lo, hi = max(th0 - 0.3, -math.pi + 1e-6), min(th0 + 0.3, -0.5 * math.pi - 1e-6)
    if g(lo) * g(hi) > 0:
        raise _Retry("target tangential speed too large relative to the carrier speed")
    th = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=200)
    return th, h(th)


class _NoLine(_Retry):
    """Internal: no single-bounce line reaches the disk from the opening."""


def _fold_back(c, u):
    """Follow a ray from ``c`` along unit ``u`` off the bottom wall to ``x = 0``.

    Returns ``(wall point, entry point, length)`` or ``None`` if the ray
    does not reach the left opening after exactly one bottom-wall bounce.
    """
    if u[1] >= 0 or u[0] >= 0:
        return None
    tw = (-1.0 - c[1]) / u[1]
    w = (c[0] + tw * u[0], -1.0)
    if not w[0] > 0:
        return None
    te = -w[0] / u[0]
    e = (0.0, -1.0 - te * u[1])
    if not -1.0 < e[1] < 1.0:
        return None
    return w, e, tw + te


class _Builder:
    def __init__(self, sim: Simulator, dom: DomainSpec, speed_floor: float, speed_cap: float,
                 clearance: float, method: str = "auto"):
        self.method = method
        self.sim = sim
        self.dom = dom
        self.R = dom.disk_radius
        self.S = speed_floor
        self.cap = speed_cap
        self.C = clearance
        self.injections = []
        self.max_speed = 0.0

    def inject(self, tau, xi, vx, vy):
        if not -1.0 < xi < 1.0:
            raise _Retry(f"entry height {xi} outside the opening")
        if tau < self.sim.time:
            raise _Retry("injection before current time")
        ev = injection_for_velocity(tau, xi, vx, vy)
        if ev.s > self.cap:
            raise BudgetTooTight(f"planned speed {ev.s:.3g} exceeds cap {self.cap:.3g}")
        self.max_speed = max(self.max_speed, ev.s)
        self.sim.schedule(ev)
        self.injections.append(ev)
        return ev

    def rw(self, j):
        return self.R * self.sim.disk_omega[j - 1]

    def build(self, j: int, rw_target: float, t0: float, t1: float):
        if j == 1:
            self._base(rw_target, t0, t1)
        elif self.method == "recursive":
            self._step(j - 1, rw_target, t0, t1)
        elif self.method == "direct":
            self._direct(j, rw_target, t0, t1)
        else:
            try:
                self._direct(j, rw_target, t0, t1, dry=True)
            except _NoLine:
                self._step(j - 1, rw_target, t0, t1)
            else:
                self._direct(j, rw_target, t0, t1)

    # disk j > 1 reached straight from the opening: down under the lower
    # disks, off the bottom wall, into the lower-left arc of disk j; the
    # carrier leaves almost radially and retraces its way out
    _EXIT_HEIGHTS = (-0.5, -0.6, -0.4, -0.7, -0.3, -0.8, -0.2, -0.9)

    def _direct(self, j, rw_target, t0, t1, dry=False):
        R = self.R
        B = t1 - t0
        cj = self.dom.center(j)
        rw_old = self.rw(j)
        for ye in self._EXIT_HEIGHTS:
            # radial line from the centre of disk j to the mirrored exit point
            dx, dy = -cj[0], -2.0 - ye
            dl = math.hypot(dx, dy)
            n = (dx / dl, dy / dl)
            t = (n[1], -n[0])
            c = (cj[0] + R * n[0], R * n[1])
            nominal = _fold_back(c, n)
            if nominal is None or not self._clear_path(c, nominal, j):
                continue
            vp = max(self.S, self.C * max(abs(rw_target), abs(rw_old)), 3.0 * nominal[2] / B)
            # incoming (reversed) is vp n - rw_target t, outgoing vp n + rw_old t
            back = self._ray(c, vp, n, t, -rw_target, j)
            out = self._ray(c, vp, n, t, rw_old, j)
            if back is None or out is None:
                continue
            if dry:
                return
            (w, e, length), speed = back
            tau = t0 + 0.5 * B - length / speed
            # entry velocity reverses the backward ray after its wall bounce
            ex, ey = e[0] - w[0], e[1] - w[1]
            el = math.hypot(ex, ey)
            self.inject(tau, e[1], -speed * ex / el, -speed * ey / el)
            self.sim.run(t1)
            return
        raise _NoLine(f"no single-bounce line from the opening to disk {j}")

    def _ray(self, c, vp, n, t, rw, j):
        ux, uy = vp * n[0] + rw * t[0], vp * n[1] + rw * t[1]
        speed = math.hypot(ux, uy)
        fb = _fold_back(c, (ux / speed, uy / speed))
        if fb is None or not self._clear_path(c, fb, j):
            return None
        return fb, speed

    def _clear_path(self, c, fb, j, margin=0.05):
        w, e, _ = fb
        lim = self.R + margin
        for i in range(1, j):
            ci = self.dom.center(i)
            if _seg_dist(c, w, ci) <= lim or _seg_dist(w, e, ci) <= lim:
                return False
        return True

    # disk 1: strike the leftmost point, leave back through the left opening
    def _base(self, rw_target, t0, t1):
        B = t1 - t0
        L = 1.0 - self.R
        rw_old = self.rw(1)
        a = max(self.S, 2.0 * abs(rw_target) * L, 2.0 * abs(rw_old) * L, 5.0 * L / B)
        t_hit = t0 + 0.5 * B
        tau = t_hit - L / a
        self.inject(tau, -rw_target * L / a, a, rw_target)
        self.sim.run(t1)

    def _run_until_disk(self, pid, disk, horizon):
        """Step the builder simulation until particle ``pid`` touches ``disk``."""
        while True:
            rec = self.sim.step(horizon)
            if rec.kind == "none":
                raise _Retry(f"particle {pid} did not reach disk {disk}")
            if rec.kind == "disk" and rec.particle == pid:
                if rec.disk != disk:
                    raise _Retry(f"particle {pid} hit disk {rec.disk}, expected {disk}")
                return rec

    def _step(self, k, rw_target, t0, t1):
        R = self.R
        dom = self.dom
        B = t1 - t0
        ck = 2.0 * k - 1.0
        j = k + 1
        # carrier speed: fast enough for the round trip, to dominate the old spin
        # of disk j and to keep rw_target / U inside the range of the contact angle
        round_trip = 2.0 * math.hypot(2.0 + R, 2.0)
        U = max(self.S, self.C * abs(self.rw(j)) + TARGET_RATIO * abs(rw_target),
                round_trip / (0.35 * B))
        self.build(k, -U, t0, t0 + 0.3 * B)
        U_act = -self.rw(k)
        if U_act <= 0:
            raise _Retry("priming of the lower disk failed")
        th, slope = _theta_for_target(R, rw_target / U_act)
        V = U_act * slope
        a = max(self.S, 2.0 * V * ck / (1.0 - R), ck / (0.03 * B))
        h1 = t0 + 0.35 * B
        tau = h1 - ck / a
        ev = self.inject(tau, -R - V * ck / a, a, V)
        # find the carrier's id from its injection record
        while True:
            rec = self.sim.step(t1)
            if rec.kind == "injection" and rec.time == ev.tau:
                pid = rec.particle
                break
            if rec.kind == "none":
                raise _Retry("carrier was not injected")
        self._run_until_disk(pid, k, t1)
        h1 = self.sim.time
        # forecast the carrier's return to disk k with the disks as they are now
        clone = Simulator(dom, self.sim.params, self.sim.state(), record=False)
        hits = []
        while True:
            rec = clone.step(t1)
            if rec.kind == "none":
                raise _Retry("carrier does not return inside the budget")
            if rec.kind == "exit" and rec.particle == pid:
                raise _Retry("carrier left before returning")
            if rec.kind == "disk":
                if rec.particle != pid:
                    raise _Retry("unplanned disk contact by a resident particle")
                hits.append(rec)
                if rec.disk == k:
                    break
                if rec.disk != j or len(hits) > 1:
                    raise _Retry(f"carrier touched disk {rec.disk}")
        if len(hits) != 2:
            raise _Retry("carrier missed the target disk")
        h3, p3, v3 = hits[-1].time, hits[-1].point, hits[-1].v_before
        F = self._fling_speed(k, p3, v3)
        g = 0.05 * (h3 - h1)
        self.build(k, F, h1 + g, h3 - g)
        self.sim.run(t1)

    def _fling_speed(self, k, p, v):
        """Surface speed of disk ``k`` that sends the returning carrier to the left opening.

        Aims the outgoing line at ``(0, y_e)`` with ``y_e`` between the disk
        row and the bottom wall, then checks it clears the lower disks.
        """
        R = self.R
        fr = contact_frame(p, v, k, self.dom)
        (nx, ny), (tx, ty), vp = fr.normal, fr.tangent, fr.v_perp
        if vp <= 0:
            raise _Retry("carrier arrives tangentially on its return")
        for frac in (0.5, 0.35, 0.65, 0.2, 0.8):
            ye = -R - frac * (1.0 - R)
            dx, dy = -p[0], ye - p[1]
            den = tx * dy - ty * dx
            if den == 0:
                continue
            F = -vp * (nx * dy - ny * dx) / den
            ux, uy = vp * nx + F * tx, vp * ny + F * ty
            if ux >= 0 or ux * dx + uy * dy <= 0:
                continue
            if self._clear_of_disks(p, (0.0, ye), k):
                return F
        # no straight line: scan outgoing directions, allowing wall bounces
        best, best_gap = None, 0.0
        a0 = math.atan2(ny, nx)
        for da in np.linspace(-1.45, 1.45, 581):
            dx, dy = math.cos(a0 + da), math.sin(a0 + da)
            gap = _escape_clearance(p, (dx, dy), k, self.dom)
            if gap > best_gap:
                best, best_gap = (dx, dy), gap
        if best is not None and best_gap > 0.02:
            dx, dy = best
            return vp * (tx * dx + ty * dy) / (nx * dx + ny * dy)
        raise _Retry("no clear exit line from the carrier's return point")

    def _clear_of_disks(self, a, b, k, margin=1e-3):
        R = self.R
        for i in range(1, k):
            c = (2.0 * i - 1.0, 0.0)
            if _seg_dist(a, b, c) <= R * (1.0 + margin):
                return False
        return True


def _escape_clearance(p, d, k: int, dom: DomainSpec, max_bounces: int = 40) -> float:
    """Smallest gap to any disk along the ray leaving disk ``k`` at ``p`` in direction ``d``,
    with wall bounces, up to an opening; 0 if it touches a disk or never gets out."""
    R = dom.disk_radius
    x, y = p
    dx, dy = d
    gap = math.inf
    for b in range(max_bounces):
        ty = (math.copysign(1.0, dy) - y) / dy if dy != 0 else math.inf
        tx = ((dom.width if dx > 0 else 0.0) - x) / dx if dx != 0 else math.inf
        t = min(tx, ty)
        e = (x + t * dx, y + t * dy)
        for i, c in enumerate(dom.centers, start=1):
            if b == 0 and i == k:
                continue  # a ray leaving a disk cannot come back to it without a bounce
            gap = min(gap, _seg_dist((x, y), e, c) - R)
        if gap <= 0:
            return 0.0
        if tx <= ty:
            return gap if abs(e[1]) < 1.0 - 1e-6 else 0.0
        x, y = e
        dy = -dy
    return 0.0


def _seg_dist(a, b, c):
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    s = 0.0 if L2 == 0 else max(0.0, min(1.0, ((c[0] - ax) * dx + (c[1] - ay) * dy) / L2))
    return math.hypot(ax + s * dx - c[0], ay + s * dy - c[1])


def _check_eta(params: PhysicalParams):
    if params.eta != 1.0:
        raise Infeasible(f"planners are only constructed for eta = 1 (got {params.eta})")


def build_set_omega(sim: Simulator, j: int, omega_target: float, t0: float, t1: float,
                    speed_floor: float, speed_cap: float = DEFAULT_SPEED_CAP, clearance: float = 20.0,
                    method: str = "auto"):
    """Append a set-omega construction to a running simulation; returns (injections, max speed).

    ``sim`` must be at a time ``<= t0`` and is left at ``t1``.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    b = _Builder(sim, sim.dom, speed_floor, speed_cap, clearance, method)
    b.build(j, sim.dom.disk_radius * omega_target, t0, t1)
    return b.injections, b.max_speed


def check_set_omega(plan_injections, state: SystemState, dom, params, j, omega_target, t_end):
    sim = execute(plan_injections, state, dom, params, t_end)
    residents = {p.id for p in state.particles}
    ids = {rec.particle for rec in sim.log if rec.kind == "injection"} - residents
    roster = roster_of(sim, ids)
    exits = exit_times_of(sim, ids)
    reasons = []
    if sim.halted is not None:
        reasons.append(f"halted: {sim.halted.reason}")
    final = sim.state()
    resid = abs(final.disks[j - 1].omega - omega_target)
    if not resid <= OMEGA_TOL:
        reasons.append(f"omega residual {resid:.3g}")
    if roster.get(j, 0) != 1:
        reasons.append(f"disk {j} hit {roster.get(j, 0)} times")
    if any(d > j for d in roster):
        reasons.append(f"disks beyond {j} touched: {sorted(d for d in roster if d > j)}")
    if len(exits) != len(ids):
        reasons.append(f"{len(ids) - len(exits)} planned particles did not exit")
    if sim.tangential_stops:
        reasons.append("tangential stop")
    rep = PlanReport(not reasons, final, roster, exits, resid, sim.halted.reason if sim.halted else None,
                     len(sim.tangential_stops), len(sim.trapped), reasons)
    return rep


def plan_set_omega(j: int, omega_target: float, budget: float, state: SystemState, dom: DomainSpec,
                   params: PhysicalParams, speed_floor: float = 1.0,
                   speed_cap: float = DEFAULT_SPEED_CAP, clearance: float = 20.0,
                   method: str = "auto") -> InjectionPlan:
    """Plan injections that leave disk ``j`` spinning at ``omega_target`` after ``budget``.

    Resident particles in ``state`` must not touch any disk during the
    budget.  The speed floor is doubled until the executed plan meets the
    objective; past ``speed_cap`` :class:`BudgetTooTight` is raised.
    """
    _check_eta(params)
    if not 1 <= j <= dom.n_disks:
        raise ValueError(f"disk index {j} out of range")
    if not budget > 0:
        raise ValueError("budget must be positive")
    t0 = state.time
    t1 = t0 + budget
    S = speed_floor
    last = []
    while S <= speed_cap:
        sim = Simulator(dom, params, state.copy(), record=True)
        try:
            inj, vmax = build_set_omega(sim, j, omega_target, t0, t1, S, speed_cap, clearance, method)
        except _Retry as exc:
            last.append(f"speed floor {S:.3g}: {exc}")
            S *= 2.0
            continue
        except DynamicsHalted as exc:
            last.append(f"speed floor {S:.3g}: halted ({exc.reason})")
            S *= 2.0
            continue
        rep = check_set_omega(inj, state, dom, params, j, omega_target, t1)
        if rep.success:
            return InjectionPlan(
                inj, {"kind": "set_omega", "disk": j, "omega": omega_target}, t0, budget,
                ["no resident particle touches a disk before the budget ends",
                 "no other injections during the budget"],
                rep, {"speed_floor": S, "max_speed": vmax, "particles": len(inj)})
        last.append(f"speed floor {S:.3g}: " + "; ".join(rep.reasons))
        S *= 2.0
    raise BudgetTooTight("no plan under the speed cap; " + (last[-1] if last else ""))


def plan_set_disk_state(j: int, phi_target: float, omega_target: float, t_budget: float,
                        dom: DomainSpec, params: PhysicalParams, state: Optional[SystemState] = None,
                        margin: float = 1.5, speed_cap: float = DEFAULT_SPEED_CAP) -> InjectionPlan:
    """Plan injections bringing disk ``j`` to ``(phi_target, omega_target)`` at ``t_budget``.

    The disk is first spun to an intermediate ``omega_1`` fast enough to
    sweep a full turn relative to ``omega_target`` within a third of the
    budget; the second spin is delayed by the wait that makes the phases
    line up.
    """
    _check_eta(params)
    if state is None:
        state = SystemState.empty(dom)
    if state.particles:
        raise ValueError("the system must be empty")
    t0 = state.time
    third = t_budget / 3.0
    omega_1 = omega_target + margin * 3.0 * TWO_PI / t_budget  # (omega_1 - omega') * t/3 > 2 pi
    plan_a = plan_set_omega(j, omega_1, third, state, dom, params, speed_cap=speed_cap)
    mid = plan_a.report.final_state
    plan_b = plan_set_omega(j, omega_target, third, mid, dom, params, speed_cap=speed_cap)
    # phase at the end with no wait; a wait of tau adds (omega_1 - omega') * tau
    base = execute(plan_a.injections + plan_b.injections, state, dom, params, t0 + t_budget, record=False)
    phi0 = base.state().disks[j - 1].phi
    w1 = mid.disks[j - 1].omega
    rate = w1 - omega_target
    wait = wrap_angle(phi_target - phi0) / rate
    if not 0.0 <= wait < third:
        raise PlanningError(f"computed wait {wait} outside [0, {third})")
    shifted = [ev._replace(tau=ev.tau + wait) for ev in plan_b.injections]
    inj = plan_a.injections + shifted
    sim = execute(inj, state, dom, params, t0 + t_budget)
    final = sim.state()
    d = final.disks[j - 1]
    dphi = abs(wrap_angle(d.phi - phi_target + math.pi) - math.pi)
    reasons = []
    if sim.halted is not None:
        reasons.append(f"halted: {sim.halted.reason}")
    if dphi > 1e-6:
        reasons.append(f"phase residual {dphi:.3g}")
    if abs(d.omega - omega_target) > OMEGA_TOL:
        reasons.append(f"omega residual {abs(d.omega - omega_target):.3g}")
    if final.particles:
        reasons.append(f"{len(final.particles)} particles left")
    ids = {rec.particle for rec in sim.log if rec.kind == "injection"}
    rep = PlanReport(not reasons, final, roster_of(sim, ids), exit_times_of(sim, ids),
                     max(dphi, abs(d.omega - omega_target)), sim.halted.reason if sim.halted else None,
                     len(sim.tangential_stops), len(sim.trapped), reasons)
    return InjectionPlan(inj, {"kind": "set_disk_state", "disk": j, "phi": phi_target, "omega": omega_target},
                         t0, t_budget, ["empty system", "no other injections during the budget"], rep,
                         {"omega_1": w1, "wait": wait, "max_speed": max(ev.s for ev in inj)})
