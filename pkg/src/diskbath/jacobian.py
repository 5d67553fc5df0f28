"""Closed-form injection and disk-response maps with finite-difference checks.

``injection_map`` sends injection data ``(tau, xi, delta, s)`` of a particle
entering through the left opening to its free-flight state at time ``t``.
``disk_response_map`` follows a particle through one collision with a disk
of radius ``R`` at the origin (``eta = 1``), returning the disk state and
the particle state at time ``t``.  Both are written out explicitly so they
can be cross-checked against the event-driven simulator and against
numerical derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import TWO_PI, wrap_angle
from .exceptions import NoCollision, NoPreimage


class InjectionCoords(NamedTuple):
    tau: float
    xi: float
    delta: float
    s: float


class FreeFlightCoords(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float


def injection_map(c: InjectionCoords, t: float) -> FreeFlightCoords:
    tau, xi, delta, s = c
    dt = t - tau
    cd, sd = math.cos(delta), math.sin(delta)
    return FreeFlightCoords(dt * s * cd, -dt * s * sd + xi, s * cd, -s * sd)


def injection_map_inverse(f: FreeFlightCoords, t: float) -> InjectionCoords:
    x, y, vx, vy = f
    if not vx > 0:
        raise NoPreimage(f"vx = {vx} does not point into the domain")
    s = math.hypot(vx, vy)
    delta = math.atan(-vy / vx)
    # elapsed flight time x / vx is exact for vy = 0 and avoids cancellation
    dt = x / vx
    tau = t - dt
    xi = y + dt * s * math.sin(delta)
    # tau = 0 (injection at the start of the window) is accepted
    if not 0.0 <= tau < t:
        raise NoPreimage(f"recovered tau = {tau} outside [0, {t})")
    return InjectionCoords(tau, xi, delta, s)


def injection_det(c: InjectionCoords) -> float:
    """Analytic Jacobian determinant ``-s^2 cos(delta)``."""
    return -c.s ** 2 * math.cos(c.delta)


def central_jacobian(fun, x0, rel_step: float = 1e-5, abs_floor: float = 1e-5):
    """Central-difference Jacobian with a per-coordinate step ``rel_step * max(|x_i|, 1)``.

    ``abs_floor`` is only used when it is larger than the relative step.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(fun(x0), dtype=float)
    J = np.empty((f0.size, x0.size))
    for i in range(x0.size):
        h = max(rel_step * max(abs(x0[i]), 1.0), 0.0)
        if h == 0.0:
            h = abs_floor
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (xp[i] - xm[i])
    return J


@dataclass
class DetCheck:
    analytic: float
    numeric: float
    discrepancy: float  # relative

    def as_tuple(self):
        return self.analytic, self.numeric, self.discrepancy


def injection_jacobian_check(c: InjectionCoords, t: float, rel_step: float = 1e-5) -> DetCheck:
    fun = lambda z: injection_map(InjectionCoords(*z), t)
    J = central_jacobian(fun, np.array(c, dtype=float), rel_step)
    num = float(np.linalg.det(J))
    ana = injection_det(c)
    return DetCheck(ana, num, abs(num - ana) / abs(ana) if ana != 0 else abs(num))


def convergence_order(c: InjectionCoords, t: float, steps=(1e-1, 5e-2, 2.5e-2)):
    """Observed order of the difference scheme from errors at successive steps.

    Returns ``(errors, orders)``; central differences should give orders ~2.
    A plain polynomial map has no truncation error in several entries, so
    the determinant error is dominated by the trigonometric ones.
    """
    errs = [abs(injection_jacobian_check(c, t, h).numeric - injection_det(c)) for h in steps]
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(steps[i] / steps[i + 1])
              for i in range(len(errs) - 1)]
    return errs, orders


# ---------------------------------------------------------------- disk response

class DiskResponseInput(NamedTuple):
    x: float
    y: float
    vx: float
    vy: float
    phi: float
    omega: float


class DiskResponse(NamedTuple):
    phi_t: float
    omega_t: float
    x_t: float
    y_t: float
    vx_t: float
    vy_t: float
    tau: float
    theta: float


def collision_time(x, y, vx, vy, R):
    """Time of the first contact with the disk of radius ``R`` at the origin.

    Written in terms of the tangential and normal contact speeds: with
    ``R v_t = v_x y - v_y x`` the normal speed is ``sqrt(|v|^2 - v_t^2)``
    and ``tau = -(R v_perp + x v_x + y v_y) / |v|^2``.
    """
    v2 = vx * vx + vy * vy
    vt = (vx * y - vy * x) / R
    disc = v2 - vt * vt
    if disc <= 0:
        return None
    vperp = math.sqrt(disc)
    tau = -(R * vperp + x * vx + y * vy) / v2
    return tau, vt, vperp


def disk_response_map(inp: DiskResponseInput, t: float, R: float, window=(0.0, None)) -> DiskResponse:
    """State at time ``t`` after one collision with the disk at the origin, ``eta = 1``.

    The particle must hit the disk in ``(window[0], min(window[1], t))``;
    otherwise :class:`NoCollision` is raised.
    """
    x, y, vx, vy, phi, omega = inp
    hit = collision_time(x, y, vx, vy, R)
    t_hi = t if window[1] is None else min(t, window[1])
    if hit is None or not (window[0] < hit[0] < t_hi):
        raise NoCollision("trajectory does not hit the disk inside the window")
    tau, vt, vperp = hit
    px, py = x + tau * vx, y + tau * vy
    # outgoing: normal speed reversed, tangential speed replaced by R omega
    vx_t = vperp * px / R + omega * py
    vy_t = vperp * py / R - omega * px
    omega_t = vt / R
    phi_t = wrap_angle(phi + omega * tau + omega_t * (t - tau))
    rest = t - tau
    return DiskResponse(phi_t, omega_t, px + rest * vx_t, py + rest * vy_t, vx_t, vy_t,
                        tau, math.atan2(py, px))


def omega_row_analytic(inp: DiskResponseInput, R: float):
    """Gradient of ``omega_t`` with respect to ``(x, y, vx, vy)``."""
    x, y, vx, vy = inp[:4]
    return np.array([-vy, vx, y, -x]) / (R * R)


def tau_gradient_analytic(inp: DiskResponseInput, R: float):
    """Gradient of the collision time with respect to ``(x, y, vx, vy)``."""
    x, y, vx, vy = inp[:4]
    v2 = vx * vx + vy * vy
    tau, vt, vperp = collision_time(x, y, vx, vy, R)
    # d vt / d(x, y, vx, vy)
    dvt = np.array([-vy, vx, y, -x]) / R
    dv2 = np.array([0.0, 0.0, 2 * vx, 2 * vy])
    dvperp = (0.5 * dv2 - vt * dvt) / vperp
    num = -(R * vperp + x * vx + y * vy)
    dnum = -(R * dvperp + np.array([vx, vy, x, y]))
    return (dnum * v2 - num * dv2) / (v2 * v2)


def phi_row_analytic(inp: DiskResponseInput, t: float, R: float):
    """Gradient of the unwrapped ``phi_t``: ``(omega - omega_t) grad tau + (t - tau) grad omega_t``."""
    tau, vt, _ = collision_time(*inp[:4], R)
    return (inp.omega - vt / R) * tau_gradient_analytic(inp, R) + (t - tau) * omega_row_analytic(inp, R)


def phi_row_without_normal_terms(inp: DiskResponseInput, t: float, R: float):
    """Variant of :func:`phi_row_analytic` whose velocity entries drop ``-R v / v_perp``.

    Kept to document that the shortened expression for the collision-time
    derivative in the velocity directions disagrees with finite differences.
    """
    x, y, vx, vy, _, omega = inp
    tau, vt, vperp = collision_time(x, y, vx, vy, R)
    v2 = vx * vx + vy * vy
    dtau = np.array([-(vt * vy / vperp + vx), vt * vx / vperp - vy,
                     vt * y / vperp - 2 * vx * tau - x, -vt * x / vperp - 2 * vy * tau - y]) / v2
    return (omega - vt / R) * dtau + (t - tau) * omega_row_analytic(inp, R)


@dataclass
class RankCheck:
    matrix: np.ndarray          # 2 x 4, rows (phi_t, omega_t)
    singular_values: np.ndarray
    degenerate: bool
    omega_row_error: float      # relative, analytic vs numeric

    @property
    def smallest(self) -> float:
        return float(self.singular_values[-1])


def _phi_unwrapped(inp, t, R):
    x, y, vx, vy, phi, omega = inp
    tau, vt, _ = collision_time(x, y, vx, vy, R)
    return phi + omega * tau + vt / R * (t - tau)


def disk_response_rank_check(inp: DiskResponseInput, t: float, R: float,
                             rel_step: float = 1e-6, locus_tol: float = 1e-9) -> RankCheck:
    """Numerical 2x4 derivative of ``(phi_t, omega_t)`` in ``(x, y, vx, vy)``.

    ``phi_t`` is differentiated before wrapping to ``[0, 2 pi)``.  The
    matrix loses rank on the locus ``R omega = v_t``.
    """
    disk_response_map(inp, t, R)  # validates the collision
    rest = tuple(inp[4:])

    def f(z):
        full = DiskResponseInput(*z, *rest)
        return np.array([_phi_unwrapped(full, t, R), disk_response_map(full, t, R).omega_t])

    J = central_jacobian(f, np.array(inp[:4], dtype=float), rel_step)
    sv = np.linalg.svd(J, compute_uv=False)
    row = omega_row_analytic(inp, R)
    err = float(np.linalg.norm(J[1] - row) / np.linalg.norm(row))
    vt = (inp.vx * inp.y - inp.vy * inp.x) / R
    degenerate = abs(R * inp.omega - vt) <= locus_tol * max(1.0, abs(vt))
    return RankCheck(J, sv, degenerate, err)


def on_locus(inp: DiskResponseInput, R: float) -> DiskResponseInput:
    """Same particle data with the disk spin set to ``R omega = v_t``."""
    return inp._replace(omega=(inp.vx * inp.y - inp.vy * inp.x) / (R * R))


def random_response_input(rng, R: float, t: float = 2.0, margin: float = 0.2):
    """Random particle that hits the disk at the origin non-tangentially before ``t``.

    Aims at an impact parameter ``b`` with ``|b| < (1 - margin) R`` from a
    point at distance between 1.5R and 3R.
    """
    while True:
        ang = rng.uniform(0, TWO_PI)
        dist = rng.uniform(1.5 * R, 3.0 * R)
        x, y = dist * math.cos(ang), dist * math.sin(ang)
        b = rng.uniform(-(1 - margin) * R, (1 - margin) * R)
        # direction towards the origin rotated to impact parameter b
        ux, uy = -x / dist, -y / dist
        a = math.asin(b / dist)
        ca, sa = math.cos(a), math.sin(a)
        dx, dy = ux * ca - uy * sa, ux * sa + uy * ca
        speed = rng.uniform(1.0, 3.0)
        omega = rng.uniform(-3.0, 3.0)
        inp = DiskResponseInput(x, y, speed * dx, speed * dy, rng.uniform(0, TWO_PI), omega)
        hit = collision_time(x, y, inp.vx, inp.vy, R)
        if hit is not None and 0 < hit[0] < 0.5 * t:
            return inp


def response_via_simulator(inp: DiskResponseInput, t: float, R: float) -> DiskResponse:
    """Same quantities as :func:`disk_response_map`, from the event-driven simulator.

    The disk is placed in a one-disk domain (centre ``(1, 0)``); any wall or
    opening contact before ``t`` raises :class:`NoCollision`.
    """
    from .dynamics import DiskState, ParticleState, PhysicalParams, Simulator, SystemState
    from .geometry import DomainSpec

    dom = DomainSpec(1, R)
    st = SystemState(0.0, [ParticleState((inp.x + 1.0, inp.y), (inp.vx, inp.vy), 0)],
                     [DiskState(inp.phi, inp.omega)])
    sim = Simulator(dom, PhysicalParams(1.0, 1.0), st)
    hit = None
    while True:
        rec = sim.step(t)
        if rec.kind == "none":
            break
        if rec.kind != "disk" or hit is not None:
            raise NoCollision(f"unexpected {rec.kind} event at {rec.time}")
        hit = rec
    if hit is None:
        raise NoCollision("no disk contact before t")
    fin = sim.state()
    p = fin.particles[0]
    d = fin.disks[0]
    return DiskResponse(d.phi, d.omega, p.q[0] - 1.0, p.q[1], p.v[0], p.v[1], hit.time,
                        math.atan2(hit.point[1], hit.point[0] - 1.0))
