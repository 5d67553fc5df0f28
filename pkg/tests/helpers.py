"""Shared generators for the control tests."""

import math

import numpy as np

from diskbath.control import admissibility
from diskbath.dynamics import DiskState, ParticleState, SystemState


def random_admissible_state(rng, dom, params, k_max=3, omega_range=2.0):
    """State with 1..k_max particles uniform in the playground, Gaussian velocities."""
    while True:
        k = int(rng.integers(1, k_max + 1))
        parts = []
        while len(parts) < k:
            q = (rng.uniform(0, dom.width), rng.uniform(-1, 1))
            if dom.in_interior(q):
                v = tuple(rng.normal(size=2))
                parts.append(ParticleState(q, v, len(parts)))
        disks = [DiskState(rng.uniform(0, 2 * math.pi), rng.uniform(-omega_range, omega_range))
                 for _ in range(dom.n_disks)]
        st = SystemState(0.0, parts, disks)
        if not admissibility(st, dom, params):
            return st


def random_disk_starts(rng, dom, j, n, equatorial=10):
    """Angles on disk ``j``: ``equatorial`` of them within the connector band, the rest uniform."""
    R = dom.disk_radius
    from diskbath.control import delta_star
    band = math.asin(min(1.0, 0.5 * delta_star(R) / R))
    eq = [rng.choice([0.0, math.pi]) + rng.uniform(-band, band) for _ in range(equatorial)]
    eq[:2] = [0.0, math.pi]
    return np.array(eq + list(rng.uniform(0, 2 * math.pi, n - equatorial)))
