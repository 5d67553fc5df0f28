"""Proper projected particle paths: polylines from a disk (or a moving
particle) to an opening that bounce specularly off the walls, meet disks
only non-tangentially and touch the openings only at their end.

A disk vertex can be realised by giving the disk the surface speed that
turns the arriving velocity into the outgoing direction; the normal speed
is kept, so the speed along the next segment is ``v_perp / (d . n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..dynamics import PhysicalParams
from ..exceptions import Infeasible
from ..geometry import DISK, EXIT_LEFT, EXIT_RIGHT, DomainSpec, next_boundary_event
from .omega import required_omega

Vec = Tuple[float, float]

POINT_TOL = 1e-9       # vertex on its boundary
SPECULAR_TOL = 1e-9    # direction mismatch at a wall vertex
TANGENCY_TOL = 1e-6    # smallest |d . n| accepted at a disk vertex
CLEAR_TOL = 1e-9       # relative clearance of segments from disks they do not touch
HALF_PI = 0.5 * math.pi

START, WALL, DISK_V, EXIT = "start", "wall", "disk", "exit"


def delta_star(R: float) -> float:
    """Height at which the tangent from an equator point meets the neighbouring disk."""
    return 2.0 * R * math.sqrt(1.0 - R) / (2.0 - R)


@dataclass(frozen=True)
class Vertex:
    point: Vec
    kind: str
    disk: Optional[int] = None

    def to_dict(self):
        return {"point": list(self.point), "kind": self.kind, "disk": self.disk}


@dataclass
class PathSpec:
    """Polyline with classified vertices.

    ``v_in`` is the velocity with which the particle reaches the first
    vertex when that vertex is a disk contact; ``speed`` is the speed on
    the first segment otherwise.
    """

    vertices: List[Vertex]
    v_in: Optional[Vec] = None
    speed: float = 1.0
    notes: dict = field(default_factory=dict)

    @property
    def n_segments(self) -> int:
        return len(self.vertices) - 1

    def directions(self) -> List[Vec]:
        out = []
        for a, b in zip(self.vertices, self.vertices[1:]):
            dx, dy = b.point[0] - a.point[0], b.point[1] - a.point[1]
            L = math.hypot(dx, dy)
            out.append((dx / L, dy / L) if L > 0 else (math.nan, math.nan))
        return out

    def lengths(self) -> List[float]:
        return [math.hypot(b.point[0] - a.point[0], b.point[1] - a.point[1])
                for a, b in zip(self.vertices, self.vertices[1:])]

    def kinematics(self, dom: DomainSpec, eta: float = 1.0):
        """Speeds on each segment and required surface speeds at disk vertices.

        Returns ``(speeds, contacts)`` where ``contacts`` lists
        ``(vertex index, disk, R omega, incoming velocity, outgoing velocity)``.
        """
        dirs = self.directions()
        speeds, contacts = [], []
        v = self.v_in
        for i, d in enumerate(dirs):
            vx_ = self.vertices[i]
            if vx_.kind == DISK_V and v is not None:
                cx, cy = dom.center(vx_.disk)
                nx, ny = vx_.point[0] - cx, vx_.point[1] - cy
                r = math.hypot(nx, ny)
                nx, ny = nx / r, ny / r
                vperp = -(v[0] * nx + v[1] * ny)
                dn = d[0] * nx + d[1] * ny
                sp = vperp / dn if dn != 0 else math.inf
                u = (sp * d[0], sp * d[1])
                rw = required_omega(v, math.atan2(ny, nx), u, eta)
                contacts.append((i, vx_.disk, rw, v, u))
            elif i == 0:
                sp = math.hypot(*v) if v is not None else self.speed
            else:
                sp = speeds[-1]
            speeds.append(sp)
            v = (sp * d[0], sp * d[1])
        return speeds, contacts

    def times(self, dom: DomainSpec, t0: float = 0.0, eta: float = 1.0):
        """Arrival time at every vertex when the first vertex is passed at ``t0``."""
        speeds, _ = self.kinematics(dom, eta)
        out = [t0]
        for L, sp in zip(self.lengths(), speeds):
            out.append(out[-1] + L / sp)
        return out

    def to_dict(self) -> dict:
        return {"vertices": [v.to_dict() for v in self.vertices],
                "v_in": None if self.v_in is None else list(self.v_in),
                "speed": self.speed, "notes": self.notes}


# ---------------------------------------------------------------- construction

def _uniform(rng, lo, hi, default):
    return default if rng is None else float(rng.uniform(lo, hi))


def _dn(a: Vec, b: Vec, n: Vec) -> float:
    dx, dy = b[0] - a[0], b[1] - a[1]
    return (dx * n[0] + dy * n[1]) / math.hypot(dx, dy)


def _ladder(theta: float, R: float, frac: float, min_dn: float = 0.05, max_steps: int = 400):
    """Angles and wall points climbing from ``theta`` in (0, pi/2] to the pole.

    Canonical frame: disk at the origin, upper right quarter, wall at
    ``y = 1``.  Each rung leaves the disk at ``theta``, bounces off the
    wall and lands at ``theta'``; leaving requires
    ``2 sin(theta) > R (1 - cos(theta + theta'))``.
    """
    pts = [(R * math.cos(theta), R * math.sin(theta))]
    for _ in range(max_steps):
        if theta >= HALF_PI:
            return pts
        p = pts[-1]
        pole_img = (0.0, 2.0 - R)
        if _dn(p, pole_img, (math.cos(theta), math.sin(theta))) > min_dn:
            nxt = HALF_PI
        else:
            A = math.acos(max(-1.0, 1.0 - 2.0 * math.sin(theta) / R))
            nxt = min(theta + frac * (A - 2.0 * theta), HALF_PI)
        # unfolded landing point, then the wall crossing
        img = (R * math.cos(nxt), 2.0 - R * math.sin(nxt))
        s = (1.0 - p[1]) / (img[1] - p[1])
        pts.append((p[0] + s * (img[0] - p[0]), 1.0))
        pts.append((R * math.cos(nxt), R * math.sin(nxt)) if nxt < HALF_PI else (0.0, R))
        theta = nxt
    raise Infeasible("ladder did not reach the pole")


def _to_frame(j, dom, sx, sy):
    cx = 2.0 * j - 1.0
    return lambda p: (cx + sx * p[0], sy * p[1])


def _ladder_vertices(j, dom, theta, frac):
    """Vertices from the disk point at angle ``theta`` to the nearer pole."""
    R = dom.disk_radius
    sx = 1.0 if math.cos(theta) >= 0 else -1.0
    sy = 1.0 if math.sin(theta) >= 0 else -1.0
    canon = math.atan2(abs(math.sin(theta)), abs(math.cos(theta)))
    f = _to_frame(j, dom, sx, sy)
    pts = _ladder(canon, R, frac)
    out = []
    for i, p in enumerate(pts):
        out.append(Vertex(f(p), DISK_V if i % 2 == 0 else WALL, j if i % 2 == 0 else None))
    return out, sy


def _pole_exit(j, dom, sy, side, elev_frac):
    R = dom.disk_radius
    cx = 2.0 * j - 1.0
    dist = cx if side == "left" else dom.width - cx
    e = elev_frac * math.atan((1.0 - R) / dist)
    x = 0.0 if side == "left" else dom.width
    return Vertex((x, sy * (R + dist * math.tan(e))), EXIT)


def _connector(j, dom, p, delta, rng):
    """Segment from a near-equator point of disk ``j`` to a point with height
    in ``(delta, delta*)`` on the facing disk, or to the facing opening."""
    R = dom.disk_radius
    cx = 2.0 * j - 1.0
    right = p[0] >= cx
    nb = j + 1 if right else j - 1
    sy = 1.0 if p[1] > 0 else -1.0 if p[1] < 0 else (1.0 if rng is None or rng.random() < 0.5 else -1.0)
    ds = delta_star(R)
    n_p = ((p[0] - cx) / R, p[1] / R)
    fracs = (0.5, 0.3, 0.7, 0.15, 0.85) if rng is None else tuple(rng.uniform(0.05, 0.95, 5))
    for fr in fracs:
        yq = sy * (delta + fr * (ds - delta))
        if not 1 <= nb <= dom.n_disks:
            q = (dom.width if right else 0.0, yq)
            if _dn(p, q, n_p) > TANGENCY_TOL:
                return Vertex(q, EXIT), None
            continue
        cn = 2.0 * nb - 1.0
        qx = cn - math.sqrt(R * R - yq * yq) if right else cn + math.sqrt(R * R - yq * yq)
        q = (qx, yq)
        n_q = ((qx - cn) / R, yq / R)
        if _dn(p, q, n_p) > TANGENCY_TOL and _dn(q, p, n_q) > TANGENCY_TOL:
            return Vertex(q, DISK_V, nb), nb
    raise Infeasible(f"no connector from {p} on disk {j}")


def _from_disk(j, point, dom, rng, delta, first_kind, exit_side):
    R = dom.disk_radius
    cx = 2.0 * j - 1.0
    frac = _uniform(rng, 0.3, 0.7, 0.5)
    elev = _uniform(rng, 0.25, 0.75, 0.5)
    verts = [Vertex(tuple(point), first_kind, j)]
    disk, p = j, point
    if abs(point[1]) <= delta:
        v, nb = _connector(j, dom, point, delta, rng)
        verts.append(v)
        if nb is None:
            return verts
        disk, p = nb, v.point
        cx = 2.0 * nb - 1.0
    theta = math.atan2(p[1], p[0] - cx)
    rungs, sy = _ladder_vertices(disk, dom, theta, frac)
    verts.extend(rungs[1:])
    if exit_side is None:
        side = "left" if cx <= dom.width - cx else "right"
        if rng is not None:
            side = "left" if rng.random() < 0.5 else "right"
    else:
        side = exit_side
    verts.append(_pole_exit(disk, dom, sy, side, elev))
    return verts


def proper_path_from(start: Vec, dom: DomainSpec, velocity: Optional[Vec] = None, rng=None,
                     delta: Optional[float] = None, speed: float = 1.0,
                     exit_side: Optional[str] = None) -> PathSpec:
    """Proper path from ``start`` to one of the openings.

    ``start`` on a disk boundary: the path leaves that disk; ``velocity``,
    if given, is the velocity arriving there.  ``start`` in the interior:
    ``velocity`` is required and the particle's free flight up to its first
    disk contact forms the opening segments.  Points with ``|y| <= delta``
    (default half the tangent height ``delta*``) first take a connector to
    the facing disk.  ``rng`` randomises the free choices (rung spacing,
    connector height, exit side, exit elevation).
    """
    R = dom.disk_radius
    if delta is None:
        delta = 0.5 * delta_star(R)
    if not 0.0 < delta < delta_star(R):
        raise ValueError(f"delta must lie in (0, {delta_star(R)}), got {delta}")
    j = dom.disk_at(start)
    if j is not None:
        kind = DISK_V if velocity is not None else START
        verts = _from_disk(j, start, dom, rng, delta, kind, exit_side)
        return PathSpec(verts, None if velocity is None else tuple(velocity), speed,
                        {"delta": delta})
    if velocity is None:
        raise ValueError("an interior start needs a velocity")
    if not dom.contains(start):
        raise ValueError(f"start {start} is outside the domain")
    verts = [Vertex(tuple(start), START)]
    q, v = tuple(start), tuple(velocity)
    for _ in range(10000):
        ev = next_boundary_event(q, v, dom)
        if ev.kind in (EXIT_LEFT, EXIT_RIGHT):
            if abs(ev.point[1]) >= 1.0 - POINT_TOL:
                raise Infeasible("free flight leaves through a corner")
            verts.append(Vertex(ev.point, EXIT))
            return PathSpec(verts, None, math.hypot(*velocity), {"delta": delta})
        if ev.kind == DISK:
            if ev.grazing:
                raise Infeasible("free flight reaches a disk tangentially")
            rest = _from_disk(ev.disk, ev.point, dom, rng, delta, DISK_V, exit_side)
            verts.extend(rest)
            return PathSpec(verts, None, math.hypot(*velocity), {"delta": delta})
        verts.append(Vertex(ev.point, WALL))
        q, v = ev.point, (v[0], -v[1])
    raise Infeasible("free flight did not reach a disk or an opening")


# ---------------------------------------------------------------- validation

def _seg_dist(a, b, c):
    dx, dy = b[0] - a[0], b[1] - a[1]
    L2 = dx * dx + dy * dy
    s = 0.0 if L2 == 0 else max(0.0, min(1.0, ((c[0] - a[0]) * dx + (c[1] - a[1]) * dy) / L2))
    return math.hypot(a[0] + s * dx - c[0], a[1] + s * dy - c[1])


def _on_opening(p, dom, tol=POINT_TOL):
    return (abs(p[0]) <= tol or abs(p[0] - dom.width) <= tol) and abs(p[1]) <= 1.0 + tol


def validate_proper_path(path: PathSpec, dom: DomainSpec, params: Optional[PhysicalParams] = None):
    """Check the path conditions; returns ``(ok, violations)``."""
    eta = 1.0 if params is None else params.eta
    R = dom.disk_radius
    V = path.vertices
    bad: List[str] = []
    if len(V) < 2:
        return False, ["fewer than two vertices"]
    dirs = path.directions()
    if any(math.isnan(d[0]) for d in dirs):
        bad.append("zero-length segment")
        return False, bad
    for i, v in enumerate(V):
        x, y = v.point
        last = i == len(V) - 1
        if x < -POINT_TOL or x > dom.width + POINT_TOL or abs(y) > 1.0 + POINT_TOL:
            bad.append(f"vertex {i} outside the domain")
        if not last and _on_opening(v.point, dom):
            bad.append(f"vertex {i}: interior opening contact")
        if last and v.kind != EXIT:
            bad.append("path does not end at an opening")
        if v.kind == EXIT:
            if not last:
                bad.append(f"vertex {i}: exit before the end")
            elif not (_on_opening(v.point, dom) and abs(y) < 1.0):
                bad.append(f"vertex {i}: exit vertex not on an opening")
        elif v.kind == WALL:
            if abs(abs(y) - 1.0) > POINT_TOL:
                bad.append(f"vertex {i}: wall vertex off the wall")
            elif 0 < i < len(V) - 1:
                a, b = dirs[i - 1], dirs[i]
                if math.hypot(b[0] - a[0], b[1] + a[1]) > SPECULAR_TOL:
                    bad.append(f"vertex {i}: non-specular wall vertex")
            else:
                bad.append(f"vertex {i}: wall vertex at a path end")
        elif v.kind in (DISK_V, START) and v.disk is not None:
            cx, cy = dom.center(v.disk)
            r = math.hypot(x - cx, y - cy)
            if abs(r - R) > POINT_TOL:
                bad.append(f"vertex {i}: not on disk {v.disk}")
                continue
            n = ((x - cx) / r, (y - cy) / r)
            if i > 0:
                a = dirs[i - 1]
                if -(a[0] * n[0] + a[1] * n[1]) <= TANGENCY_TOL:
                    bad.append(f"vertex {i}: tangent or outward arrival at disk {v.disk}")
            elif v.kind == DISK_V and path.v_in is not None:
                if -(path.v_in[0] * n[0] + path.v_in[1] * n[1]) <= TANGENCY_TOL * math.hypot(*path.v_in):
                    bad.append(f"vertex {i}: tangent or outward arrival at disk {v.disk}")
            if i < len(V) - 1:
                b = dirs[i]
                if b[0] * n[0] + b[1] * n[1] <= TANGENCY_TOL:
                    bad.append(f"vertex {i}: tangent or inward departure from disk {v.disk}")
        elif v.kind == START:
            if i != 0:
                bad.append(f"vertex {i}: start vertex inside the path")
            elif not dom.contains(v.point):
                bad.append("start outside the domain")
        else:
            bad.append(f"vertex {i}: unknown kind {v.kind!r}")
    # segments clear every disk they do not end on
    for i, (a, b) in enumerate(zip(V, V[1:])):
        for j in range(1, dom.n_disks + 1):
            if a.disk == j or b.disk == j:
                continue
            if _seg_dist(a.point, b.point, dom.center(j)) <= R * (1.0 + CLEAR_TOL):
                bad.append(f"segment {i} meets disk {j}")
    if not bad:
        try:
            speeds, contacts = path.kinematics(dom, eta)
        except Infeasible as exc:
            bad.append(f"no realising spin: {exc}")
        else:
            if not all(math.isfinite(s) and s > 0 for s in speeds):
                bad.append("non-finite or non-positive segment speed")
            if not all(math.isfinite(c[2]) for c in contacts):
                bad.append("non-finite required spin")
    return not bad, bad
