"""Domain geometry and exact ray tracing for the disk chain.

The domain is the rectangle ``[0, 2N] x [-1, 1]`` with ``N`` disks of
radius ``R`` centred at ``(2j - 1, 0)``, ``j = 1..N``.  The vertical sides
are openings; a particle reaching one leaves the system.

All functions here are pure and work on plain ``(x, y)`` tuples of floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

from .exceptions import NotOnDisk, StuckParticle

Vec = Tuple[float, float]

GRAZING_RTOL = 1e-12
TIE_TOL = 1e-12
ON_DISK_TOL = 1e-9

WALL_TOP = "wall_top"
WALL_BOTTOM = "wall_bottom"
DISK = "disk"
EXIT_LEFT = "exit_left"
EXIT_RIGHT = "exit_right"

# tie-break rank among boundaries hit at the same instant
KIND_RANK = {WALL_TOP: 0, WALL_BOTTOM: 0, DISK: 1, EXIT_LEFT: 2, EXIT_RIGHT: 2}


@dataclass(frozen=True)
class DomainSpec:
    """Rectangle ``[0, 2N] x [-1, 1]`` holding ``N`` disks of radius ``R``."""

    n_disks: int = 1
    disk_radius: float = 0.5

    def __post_init__(self):
        if int(self.n_disks) != self.n_disks or self.n_disks < 1:
            raise ValueError(f"n_disks must be a positive integer, got {self.n_disks!r}")
        if not 0.0 < self.disk_radius < 1.0:
            raise ValueError(f"disk_radius must lie in (0, 1), got {self.disk_radius!r}")

    @property
    def width(self) -> float:
        return 2.0 * self.n_disks

    @property
    def height(self) -> float:
        return 2.0

    @property
    def opening_length(self) -> float:
        return 2.0

    @property
    def area(self) -> float:
        """Area of the playground (rectangle minus the disks)."""
        return 4.0 * self.n_disks - self.n_disks * math.pi * self.disk_radius ** 2

    def center(self, j: int) -> Vec:
        """Centre of disk ``j`` (1-based)."""
        if not 1 <= j <= self.n_disks:
            raise IndexError(f"disk index {j} out of range 1..{self.n_disks}")
        return (2.0 * j - 1.0, 0.0)

    @property
    def centers(self):
        return [self.center(j) for j in range(1, self.n_disks + 1)]

    def contains(self, q: Vec, tol: float = 0.0) -> bool:
        """True if ``q`` lies in the closed playground (up to ``tol``)."""
        x, y = q
        if x < -tol or x > self.width + tol or abs(y) > 1.0 + tol:
            return False
        R = self.disk_radius
        for cx, cy in self.centers:
            if math.hypot(x - cx, y - cy) < R - tol:
                return False
        return True

    def in_interior(self, q: Vec) -> bool:
        x, y = q
        if not (0.0 < x < self.width and -1.0 < y < 1.0):
            return False
        R = self.disk_radius
        return all(math.hypot(x - cx, y - cy) > R for cx, cy in self.centers)

    def disk_at(self, q: Vec, tol: float = ON_DISK_TOL) -> Optional[int]:
        """Index of the disk whose boundary contains ``q``, if any."""
        j = int(round((q[0] + 1.0) / 2.0))
        if 1 <= j <= self.n_disks:
            cx, cy = self.center(j)
            if abs(math.hypot(q[0] - cx, q[1] - cy) - self.disk_radius) <= tol:
                return j
        return None

    def point_on_disk(self, j: int, theta: float) -> Vec:
        cx, cy = self.center(j)
        R = self.disk_radius
        return (cx + R * math.cos(theta), cy + R * math.sin(theta))


class DiskHit(NamedTuple):
    time: float
    point: Vec
    grazing: bool


class BoundaryEvent(NamedTuple):
    time: float
    kind: str
    point: Vec
    grazing: bool = False
    disk: Optional[int] = None


class ContactFrame(NamedTuple):
    """Decomposition of a velocity at a contact point on a disk.

    ``normal`` is the outward unit normal and ``tangent`` is
    ``(sin theta, -cos theta)``.  For an incoming velocity ``v``::

        v_t    =  v . tangent
        v_perp = -v . normal        (>= 0 when moving into the disk)
    """

    theta: float
    tangent: Vec
    normal: Vec
    v_t: float
    v_perp: float

    def reconstruct(self, v_t: Optional[float] = None, v_perp: Optional[float] = None) -> Vec:
        """Velocity whose decomposition in this frame is ``(v_t, v_perp)``."""
        vt = self.v_t if v_t is None else v_t
        vp = self.v_perp if v_perp is None else v_perp
        (tx, ty), (nx, ny) = self.tangent, self.normal
        return (vt * tx - vp * nx, vt * ty - vp * ny)


def disk_hit_time(q: Vec, v: Vec, center: Vec, radius: float) -> Optional[DiskHit]:
    """First time ``t > 0`` at which the ray ``q + t v`` enters the disk.

    Returns ``None`` when the ray misses or moves away.  A contact whose
    discriminant is within ``GRAZING_RTOL * |v|^2 R^2`` of zero is reported
    with ``grazing=True`` at the point of closest approach.
    """
    vx, vy = v
    a = vx * vx + vy * vy
    if a == 0.0:
        return None
    dx = q[0] - center[0]
    dy = q[1] - center[1]
    b = dx * vx + dy * vy
    if b >= 0.0:
        return None
    c = dx * dx + dy * dy - radius * radius
    disc = b * b - a * c
    tol = GRAZING_RTOL * a * radius * radius
    if disc < -tol:
        return None
    if disc <= tol:
        t = -b / a
        grazing = True
    else:
        # c / (-b + sqrt) is the entering root without cancellation
        t = c / (-b + math.sqrt(disc))
        grazing = False
    if t <= 0.0:
        return None
    return DiskHit(t, (q[0] + t * vx, q[1] + t * vy), grazing)


def next_boundary_event(q: Vec, v: Vec, dom: DomainSpec,
                        exclude_disk: Optional[int] = None) -> BoundaryEvent:
    """Earliest boundary contact of a free particle at ``q`` with velocity ``v``.

    ``exclude_disk`` skips a disk the particle is known to be leaving (a
    straight ray cannot re-enter a convex disk it just left).
    """
    vx, vy = v
    if vx == 0.0 and vy == 0.0:
        raise StuckParticle(f"particle at {q} has zero velocity")
    x, y = q
    width = dom.width
    inf = math.inf

    t_exit, exit_kind = inf, None
    if vx < 0.0:
        t_exit, exit_kind = max(-x / vx, 0.0), EXIT_LEFT
    elif vx > 0.0:
        t_exit, exit_kind = max((width - x) / vx, 0.0), EXIT_RIGHT

    t_wall, wall_kind = inf, None
    if vy > 0.0:
        t_wall, wall_kind = max((1.0 - y) / vy, 0.0), WALL_TOP
    elif vy < 0.0:
        t_wall, wall_kind = max((-1.0 - y) / vy, 0.0), WALL_BOTTOM

    # corner contacts count as exits
    if exit_kind is not None and t_exit <= t_wall + TIE_TOL:
        best = BoundaryEvent(t_exit, exit_kind,
                             (0.0 if exit_kind == EXIT_LEFT else width, y + t_exit * vy))
    else:
        best = BoundaryEvent(t_wall, wall_kind,
                             (x + t_wall * vx, 1.0 if wall_kind == WALL_TOP else -1.0))

    R = dom.disk_radius
    for j in range(1, dom.n_disks + 1):
        if j == exclude_disk:
            continue
        cx = 2.0 * j - 1.0
        # cheap rejection: disk entirely behind the particle horizontally
        if (vx > 0.0 and cx + R < x) or (vx < 0.0 and cx - R > x) or (vx == 0.0 and abs(x - cx) > R):
            continue
        hit = disk_hit_time(q, v, (cx, 0.0), R)
        if hit is None:
            continue
        if hit.time < best.time - TIE_TOL or (
                hit.time <= best.time + TIE_TOL and KIND_RANK[best.kind] > KIND_RANK[DISK]
                and best.kind not in (EXIT_LEFT, EXIT_RIGHT)):
            best = BoundaryEvent(hit.time, DISK, hit.point, hit.grazing, j)
    return best


def contact_frame(contact: Vec, v: Vec, j: int, dom: DomainSpec) -> ContactFrame:
    """Contact angle and tangential / normal velocity components on disk ``j``."""
    cx, cy = dom.center(j)
    dx, dy = contact[0] - cx, contact[1] - cy
    r = math.hypot(dx, dy)
    if abs(r - dom.disk_radius) > ON_DISK_TOL * max(1.0, dom.disk_radius):
        raise NotOnDisk(f"{contact} is at distance {r} from disk {j} centre, radius {dom.disk_radius}")
    nx, ny = dx / r, dy / r
    theta = math.atan2(dy, dx)
    vx, vy = v
    # tangent (sin, -cos) = (ny, -nx); computed from the unit normal so that
    # axis-aligned contacts decompose exactly
    v_t = vx * ny - vy * nx
    v_perp = -(vx * nx + vy * ny)
    return ContactFrame(theta, (ny, -nx), (nx, ny), v_t, v_perp)
