import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from diskbath.exceptions import NotOnDisk, StuckParticle
from diskbath.geometry import (DISK, EXIT_LEFT, EXIT_RIGHT, WALL_TOP, DomainSpec, contact_frame,
                               disk_hit_time, next_boundary_event)

finite = st.floats(-5, 5, allow_nan=False)


def test_domain_derived_quantities():
    d = DomainSpec(3, 0.4)
    assert d.width == 6.0
    assert d.centers == [(1.0, 0.0), (3.0, 0.0), (5.0, 0.0)]
    assert d.area == pytest.approx(12 - 3 * math.pi * 0.16)
    with pytest.raises(ValueError):
        DomainSpec(1, 1.0)
    with pytest.raises(ValueError):
        DomainSpec(0, 0.3)


def test_disk_hit_head_on():
    h = disk_hit_time((0, 0), (1, 0), (1, 0), 0.5)
    assert h.time == pytest.approx(0.5)
    assert h.point == pytest.approx((0.5, 0.0))
    assert not h.grazing


def test_disk_hit_miss():
    assert disk_hit_time((0, 0), (0, 1), (1, 0), 0.5) is None


def test_disk_hit_tangent_is_flagged():
    h = disk_hit_time((0, 0.5), (1, 0), (1, 0), 0.5)
    assert h is not None and h.grazing
    assert h.time == pytest.approx(1.0)
    assert h.point == pytest.approx((1.0, 0.5))


def test_next_boundary_event_examples():
    d = DomainSpec(1, 0.5)
    ev = next_boundary_event((0.1, 0), (-1, 0), d)
    assert (ev.kind, ev.time, ev.point) == (EXIT_LEFT, pytest.approx(0.1), pytest.approx((0, 0)))
    ev = next_boundary_event((0.25, 0.5), (0, 1), d)
    assert (ev.kind, ev.time, ev.point) == (WALL_TOP, pytest.approx(0.5), pytest.approx((0.25, 1)))
    ev = next_boundary_event((0, 0), (1, 0), d)
    assert (ev.kind, ev.disk, ev.time) == (DISK, 1, pytest.approx(0.5))


def test_corner_is_exit():
    d = DomainSpec(1, 0.3)
    ev = next_boundary_event((1.5, 0.5), (1, 1), d)
    assert ev.kind == EXIT_RIGHT


def test_stuck_particle():
    with pytest.raises(StuckParticle):
        next_boundary_event((0.5, 0.5), (0, 0), DomainSpec(1, 0.3))


def test_contact_frame_examples():
    d = DomainSpec(1, 0.5)
    f = contact_frame((0.5, 0), (1, 0), 1, d)
    assert f.theta == pytest.approx(math.pi)
    assert f.v_t == pytest.approx(0, abs=1e-15) and f.v_perp == pytest.approx(1)
    f = contact_frame((1, 0.5), (1, 0), 1, d)
    assert f.theta == pytest.approx(math.pi / 2)
    assert f.v_t == pytest.approx(1) and f.v_perp == pytest.approx(0, abs=1e-15)
    f = contact_frame((1, 0.5), (0, 0), 1, d)
    assert f.v_t == 0 and f.v_perp == 0
    with pytest.raises(NotOnDisk):
        contact_frame((1, 0.7), (1, 0), 1, d)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 2 * math.pi), finite, finite)
def test_contact_frame_round_trip(theta, vx, vy):
    assume(vx == vy == 0 or math.hypot(vx, vy) > 1e-100)
    d = DomainSpec(2, 0.3)
    f = contact_frame(d.point_on_disk(2, theta), (vx, vy), 2, d)
    v2 = vx * vx + vy * vy
    assert abs(f.v_t ** 2 + f.v_perp ** 2 - v2) <= 1e-12 * max(v2, 1e-300)
    rx, ry = f.reconstruct()
    assert math.hypot(rx - vx, ry - vy) <= 1e-12 * max(math.sqrt(v2), 1e-300)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0.31, 3.0), st.floats(0, 2 * math.pi), st.floats(0.1, 5))
def test_disk_hit_agrees_with_bisection(pos_ang, dist, dir_ang, speed):
    c, R = (1.0, 0.0), 0.3
    q = (c[0] + dist * math.cos(pos_ang), c[1] + dist * math.sin(pos_ang))
    v = (speed * math.cos(dir_ang), speed * math.sin(dir_ang))
    h = disk_hit_time(q, v, c, R)
    g = lambda t: math.hypot(q[0] + t * v[0] - c[0], q[1] + t * v[1] - c[1]) - R
    # closest approach decides whether there is a root
    t_min = max(0.0, -((q[0] - c[0]) * v[0] + (q[1] - c[1]) * v[1]) / (speed * speed))
    if g(t_min) < -1e-9:
        assert h is not None
        assert abs(h.time - brentq(g, 0.0, t_min, xtol=1e-14)) <= 1e-10
    elif g(t_min) > 1e-9:
        assert h is None


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 3.99), st.floats(-0.99, 0.99), st.floats(0, 2 * math.pi))
def test_flight_stays_inside_until_event(x, y, ang):
    d = DomainSpec(2, 0.3)
    if not d.in_interior((x, y)):
        return
    v = (math.cos(ang), math.sin(ang))
    ev = next_boundary_event((x, y), v, d)
    for s in np.linspace(0, ev.time, 102)[1:-1]:
        assert d.in_interior((x + s * v[0], y + s * v[1]))
