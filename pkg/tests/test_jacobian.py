import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diskbath.exceptions import NoCollision, NoPreimage
from diskbath.jacobian import (DiskResponseInput, FreeFlightCoords, InjectionCoords, collision_time,
                               convergence_order, disk_response_map, disk_response_rank_check,
                               injection_det, injection_jacobian_check, injection_map,
                               injection_map_inverse, on_locus, phi_row_analytic,
                               phi_row_without_normal_terms, random_response_input,
                               response_via_simulator, tau_gradient_analytic)
from diskbath.jacobian import central_jacobian

R = 0.3
coords = st.builds(InjectionCoords, st.floats(0, 1.9), st.floats(-1, 1), st.floats(-1.5, 1.5),
                   st.floats(0.05, 5))


def test_injection_map_examples():
    f = injection_map(InjectionCoords(0, 0, 0, 1), 2.0)
    assert tuple(f) == pytest.approx((2, 0, 1, 0))
    assert tuple(injection_map_inverse(f, 2.0)) == pytest.approx((0, 0, 0, 1))
    # vy = 0 branch
    c = injection_map_inverse(FreeFlightCoords(1.5, 0.3, 2.0, 0.0), 2.0)
    assert c.xi == pytest.approx(0.3) and c.tau == pytest.approx(2.0 - 1.5 / 2.0)
    with pytest.raises(NoPreimage):
        injection_map_inverse(FreeFlightCoords(1.0, 0.0, -1.0, 0.0), 2.0)
    with pytest.raises(NoPreimage):
        injection_map_inverse(FreeFlightCoords(10.0, 0.0, 1.0, 0.0), 2.0)
    assert injection_det(InjectionCoords(0, 0, 0, 2)) == -4
    assert abs(injection_det(InjectionCoords(0, 0, math.pi / 2 - 1e-9, 2))) < 1e-8


@settings(max_examples=500)
@given(coords)
def test_injection_round_trip(c):
    f = injection_map(c, 2.0)
    assert f.vx > 0
    back = injection_map_inverse(f, 2.0)
    assert back.tau == pytest.approx(c.tau, abs=1e-10)
    assert back.xi == pytest.approx(c.xi, abs=1e-10)
    assert back.delta == pytest.approx(c.delta, abs=1e-10)
    assert back.s == pytest.approx(c.s, abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.builds(InjectionCoords, st.floats(0, 1.5), st.floats(-1, 1), st.floats(-1.4, 1.4),
                 st.floats(0.2, 3)))
def test_determinant_matches_differences(c):
    assert injection_jacobian_check(c, 2.0).discrepancy <= 1e-6


def test_second_order_convergence():
    _, orders = convergence_order(InjectionCoords(0.2, 0.1, 0.7, 1.3), 2.0)
    assert all(abs(o - 2) < 0.1 for o in orders)


def test_radial_hit_swaps():
    inp = DiskResponseInput(-0.8, 0.0, 2.0, 0.0, 0.0, 1.7)
    out = disk_response_map(inp, 1.0, R)
    assert out.omega_t == pytest.approx(0.0, abs=1e-15)
    # v_t' = R omega: the particle leaves with tangential speed R * 1.7
    assert math.hypot(out.vx_t, out.vy_t) == pytest.approx(math.hypot(2.0, R * 1.7))


def test_miss_raises():
    with pytest.raises(NoCollision):
        disk_response_map(DiskResponseInput(-1, 0.5, 1, 0, 0, 0), 5.0, R)
    with pytest.raises(NoCollision):
        disk_response_map(DiskResponseInput(-1, 0.0, 1, 0, 0, 0), 0.1, R)


def test_time_shift_is_free_motion():
    rng = np.random.default_rng(4)
    for _ in range(50):
        inp = random_response_input(rng, R)
        a = disk_response_map(inp, 1.5, R)
        b = disk_response_map(inp, 2.0, R)
        assert b.x_t == pytest.approx(a.x_t + 0.5 * a.vx_t)
        assert b.omega_t == a.omega_t
        dphi = (b.phi_t - a.phi_t - 0.5 * a.omega_t) % (2 * math.pi)
        assert min(dphi, 2 * math.pi - dphi) < 1e-9


def test_closed_form_matches_simulator():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(500):
        inp = random_response_input(rng, R)
        t = collision_time(*inp[:4], R)[0] + 0.02
        a, b = disk_response_map(inp, t, R), response_via_simulator(inp, t, R)
        diffs = [abs(x - y) for x, y in zip(a, b)]
        diffs[0] = min(diffs[0], 2 * math.pi - diffs[0])
        worst = max(worst, max(diffs[:7]))
    assert worst <= 1e-10


def test_rank_two_off_locus_and_collapse_on_it():
    rng = np.random.default_rng(1)
    for _ in range(100):
        inp = random_response_input(rng, R)
        off = disk_response_rank_check(inp, 2.0, R)
        on = disk_response_rank_check(on_locus(inp, R), 2.0, R)
        assert not off.degenerate and on.degenerate
        assert off.omega_row_error <= 1e-6
        assert on.smallest <= 1e-6 * on.singular_values[0]
        assert off.smallest / off.singular_values[0] >= 1e4 * on.smallest / on.singular_values[0]


def test_tau_gradient_and_printed_shortcut():
    rng = np.random.default_rng(2)
    inp = random_response_input(rng, R)
    num = central_jacobian(lambda z: [collision_time(*z, R)[0]], np.array(inp[:4]), 1e-6)[0]
    assert np.allclose(tau_gradient_analytic(inp, R), num, rtol=1e-6, atol=1e-8)
    phi_num = central_jacobian(
        lambda z: [inp.phi + inp.omega * collision_time(*z, R)[0]
                   + collision_time(*z, R)[1] / R * (2.0 - collision_time(*z, R)[0])],
        np.array(inp[:4]), 1e-6)[0]
    assert np.allclose(phi_row_analytic(inp, 2.0, R), phi_num, rtol=1e-5, atol=1e-7)
    # dropping the -R v / v_perp terms changes the velocity entries
    short = phi_row_without_normal_terms(inp, 2.0, R)
    assert np.allclose(short[:2], phi_num[:2], rtol=1e-5, atol=1e-7)
    assert not np.allclose(short[2:], phi_num[2:], rtol=1e-3, atol=1e-5)
