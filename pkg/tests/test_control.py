import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diskbath.control import (InjectionPlan, build_set_omega, PathSpec, Vertex, admissibility, delta_star, execute,
                              first_contacts, plan_flush, plan_set_disk_state, plan_set_omega,
                              proper_path_from, required_omega, required_omega_tangential,
                              validate_proper_path)
from diskbath.dynamics import DiskState, ParticleState, PhysicalParams, SystemState, collide_disk
from diskbath.exceptions import Infeasible, NotAdmissible, PlanSearchExhausted
from diskbath.geometry import DomainSpec

from helpers import random_admissible_state, random_disk_starts

P1 = PhysicalParams(1.0, 1.0)


# ---------------------------------------------------------------- required spin

def test_required_omega_examples():
    assert required_omega_tangential(2.0, 0.5, 1.0) == 0.5
    assert collide_disk(2.0, 1.0, 0.5, 1.0)[0] == 0.5
    assert required_omega_tangential(1.3, 1.3, 2.5) == 1.3
    # keep straight along a grazing contact: R w = v_t
    assert required_omega_tangential(0.7, 0.7, 1.0) == 0.7


@settings(max_examples=300)
@given(st.floats(0, 2 * math.pi), st.floats(0.2, 3), st.floats(-3, 3), st.floats(0.1, 10))
def test_required_omega_round_trip(theta, vperp, vt_out, eta):
    n = (math.cos(theta), math.sin(theta))
    t = (n[1], -n[0])
    v = (-vperp * n[0] + 0.4 * t[0], -vperp * n[1] + 0.4 * t[1])
    u = (vperp * n[0] + vt_out * t[0], vperp * n[1] + vt_out * t[1])
    rw = required_omega(v, theta, u, eta)
    got = collide_disk(0.4, vperp, rw, eta)[0]
    assert got == pytest.approx(vt_out, abs=1e-12 * max(1.0, abs(rw)))


def test_required_omega_rejects_wrong_normal():
    with pytest.raises(Infeasible):
        required_omega((-1.0, 0.0), 0.0, (2.0, 0.0))


# ---------------------------------------------------------------- set omega

def test_base_case_stops_spinning_disk():
    d = DomainSpec(1, 0.3)
    st0 = SystemState.empty(d, omegas=[5.0])
    plan = plan_set_omega(1, 0.0, 1.0, st0, d, P1)
    sim = execute(plan.injections, st0, d, P1, plan.t_end)
    assert sim.state().disks[0].omega == 0.0
    assert sum(1 for r in sim.log if r.kind == "disk") == 1
    assert sim.state().k == 0


def test_short_budget():
    d = DomainSpec(1, 0.3)
    st0 = SystemState.empty(d)
    plan = plan_set_omega(1, 3.0, 0.01, st0, d, P1)
    sim = execute(plan.injections, st0, d, P1, plan.t_end)
    assert abs(sim.state().disks[0].omega - 3.0) <= 1e-9
    assert plan.max_speed * 0.01 < 50


@pytest.mark.parametrize("method", ["auto", "recursive"])
def test_two_disks_roster(method):
    d = DomainSpec(2, 0.3)
    st0 = SystemState.empty(d, omegas=[0.4, -1.0])
    plan = plan_set_omega(2, 1.25, 1.0, st0, d, P1, method=method)
    rep = plan.report
    assert rep.success and rep.roster.get(2) == 1
    assert abs(rep.final_state.disks[1].omega - 1.25) <= 1e-9
    if method == "recursive":
        assert rep.roster.get(1, 0) >= 2


def test_set_omega_with_quiet_resident():
    d = DomainSpec(2, 0.3)
    # resident flies up and down in a disk-free band: never meets a disk
    st0 = SystemState(0.0, [ParticleState((2.0, 0.0), (0.0, 1.0), 0)], [DiskState(), DiskState()])
    plan = plan_set_omega(1, -0.8, 0.5, st0, d, P1)
    assert plan.report.success


def test_eta_other_than_one_is_refused():
    d = DomainSpec(1, 0.3)
    with pytest.raises(Infeasible):
        plan_set_omega(1, 1.0, 1.0, SystemState.empty(d), d, PhysicalParams(2.0, 1.0))


def test_budget_monotonicity():
    d = DomainSpec(3, 0.3)
    st0 = SystemState.empty(d)
    prods = []
    for tau in (1.0, 0.1, 0.01):
        plan = plan_set_omega(3, 1.1, tau, st0, d, P1)
        assert plan.report.success
        prods.append(plan.max_speed * tau)
    assert max(prods) <= 2.0 * min(prods)


def test_plan_json_round_trip():
    d = DomainSpec(1, 0.3)
    plan = plan_set_omega(1, 0.5, 1.0, SystemState.empty(d), d, P1)
    again = InjectionPlan.from_dict(plan.to_dict())
    assert again.injections == plan.injections
    taus = [ev.tau for ev in plan.injections]
    assert taus == sorted(taus)


# ---------------------------------------------------------------- set disk state

def test_set_disk_state_random_targets():
    d = DomainSpec(1, 0.3)
    rng = np.random.default_rng(3)
    for _ in range(5):
        phi, w = rng.uniform(0, 2 * math.pi), rng.uniform(-2, 2)
        plan = plan_set_disk_state(1, phi, w, 10.0, d, P1)
        fin = execute(plan.injections, SystemState.empty(d), d, P1, 10.0).state().disks[0]
        dphi = abs((fin.phi - phi + math.pi) % (2 * math.pi) - math.pi)
        assert dphi <= 1e-6 and abs(fin.omega - w) <= 1e-9


def test_set_disk_state_identity_target():
    d = DomainSpec(2, 0.3)
    st0 = SystemState.empty(d, omegas=[0.0, 0.7], phis=[0.0, 1.1])
    # free rotation to t = 6 gives the "stay where you are" target
    fin0 = execute([], st0, d, P1, 6.0).state().disks[1]
    plan = plan_set_disk_state(2, fin0.phi, 0.7, 6.0, d, P1, st0)
    assert len(plan.injections) >= 2
    fin = execute(plan.injections, st0, d, P1, 6.0).state().disks[1]
    assert abs((fin.phi - fin0.phi + math.pi) % (2 * math.pi) - math.pi) <= 1e-6


# ---------------------------------------------------------------- paths

def test_delta_star_value():
    assert delta_star(0.5) == pytest.approx(2 * 0.5 * math.sqrt(0.5) / 1.5)
    assert delta_star(0.5) == pytest.approx(0.4714, abs=1e-4)


@pytest.mark.parametrize("n,R", [(1, 0.5), (2, 0.3), (3, 0.7), (4, 0.9), (2, 0.05)])
def test_paths_from_every_disk(n, R):
    d = DomainSpec(n, R)
    rng = np.random.default_rng(n)
    for j in range(1, n + 1):
        for th in random_disk_starts(rng, d, j, 30):
            for r in (None, rng):
                path = proper_path_from(d.point_on_disk(j, th), d, rng=r)
                ok, why = validate_proper_path(path, d)
                assert ok, (j, th, why)


def test_pole_start_is_single_run_when_clear():
    d = DomainSpec(1, 0.5)
    path = proper_path_from(d.point_on_disk(1, math.pi / 2), d)
    assert validate_proper_path(path, d)[0]
    assert path.vertices[-1].kind == "exit"


def test_equatorial_start_takes_connector():
    d = DomainSpec(2, 0.3)
    # facing the left opening: the connector is the exit segment itself
    path = proper_path_from((1 - 0.3, 0.0), d)
    ok, why = validate_proper_path(path, d)
    assert ok, why
    assert path.vertices[-1].point[0] == 0.0
    # facing disk 2: the connector lands between delta and delta*
    path = proper_path_from((1 + 0.3, 0.0), d)
    ok, why = validate_proper_path(path, d)
    assert ok, why
    v1 = path.vertices[1]
    assert v1.disk == 2
    assert path.notes["delta"] <= abs(v1.point[1]) <= delta_star(0.3)


def test_interior_start_with_velocity():
    d = DomainSpec(2, 0.3)
    path = proper_path_from((0.5, 0.3), d, velocity=(1.0, 0.25))
    assert validate_proper_path(path, d)[0]
    with pytest.raises(Infeasible):
        proper_path_from((0.5, 0.3), d, velocity=(1.0, 0.2))  # runs into the corner


def test_validator_rejections():
    d = DomainSpec(1, 0.3)
    # touches the left opening half way
    bad = PathSpec([Vertex((0.7, 0.0), "start", 1), Vertex((0.0, 0.5), "wall"),
                    Vertex((0.0, -0.5), "exit")])
    ok, why = validate_proper_path(bad, d)
    assert not ok and any("interior opening contact" in w for w in why)
    # wall bounce with a 1e-3 angle mismatch
    a, w = d.point_on_disk(1, 2.0), (0.5, 1.0)
    u = (w[0] - a[0], w[1] - a[1])
    good_y = w[1] - u[1] * (w[0] / abs(u[0]))
    exit_y = w[1] - u[1] * (w[0] / abs(u[0])) * (1 + 1e-3)
    mk = lambda y: PathSpec([Vertex(a, "start", 1), Vertex(w, "wall"), Vertex((0.0, y), "exit")])
    assert validate_proper_path(mk(good_y), d)[0]
    ok, why = validate_proper_path(mk(exit_y), d)
    assert not ok and any("non-specular" in w for w in why)
    # tangent departure
    tang = PathSpec([Vertex((1.0, 0.3), "start", 1), Vertex((0.0, 0.3), "exit")])
    assert not validate_proper_path(tang, d)[0]


# ---------------------------------------------------------------- flush

def test_flush_particle_already_leaving():
    d = DomainSpec(2, 0.3)
    st0 = SystemState(0.0, [ParticleState((0.5, 0.9), (-1.0, 0.1), 0)], [DiskState(), DiskState()])
    plan = plan_flush(st0, d, P1, rng=np.random.default_rng(0))
    assert plan.injections == [] and plan.report.success


def test_flush_single_particle_on_disk_course():
    d = DomainSpec(2, 0.3)
    st0 = SystemState(0.0, [ParticleState((0.3, 0.05), (1.0, 0.0), 0)], [DiskState(0, 1.0), DiskState(0, -1.0)])
    plan = plan_flush(st0, d, P1, rng=np.random.default_rng(0))
    sim = execute(plan.injections, st0, d, P1, plan.t_end)
    assert sim.state().k == 0 and sim.halted is None and not sim.tangential_stops


def test_flush_grazing_first_contact_keeps_straight():
    d = DomainSpec(2, 0.3)
    st0 = SystemState(0.0, [ParticleState((0.5, 0.3), (1.0, 0.0), 0)], [DiskState(0, 0.5), DiskState(0, 1.0)])
    assert not admissibility(st0, d, P1)
    plan = plan_flush(st0, d, P1, rng=np.random.default_rng(0))
    assert any(s["keep_straight"] for s in plan.info["schedule"])
    sim = execute(plan.injections, st0, d, P1, plan.t_end)
    assert sim.state().k == 0


def test_flush_separates_near_simultaneous_contacts():
    d = DomainSpec(2, 0.3)
    A = ParticleState((0.5, 0.6), (1.0, -0.3), 0)
    from diskbath.control.flush import _routes
    stA = SystemState(0.0, [A], [DiskState(0, 0.5), DiskState(0, 1.0)])
    reqs, _ = _routes(stA, d, P1, first_contacts(stA, d), None, False)
    r2 = reqs[1]
    T = r2.time + 2e-4
    th = -2.5
    c = d.center(r2.disk)
    n = (math.cos(th), math.sin(th))
    P = (c[0] + 0.3 * n[0], c[1] + 0.3 * n[1])
    B = ParticleState((P[0] + 0.3 * T * n[0], P[1] + 0.3 * T * n[1]), (-0.3 * n[0], -0.3 * n[1]), 1)
    st2 = SystemState(0.0, [A, B], [DiskState(0, 0.5), DiskState(0, 1.0)])
    assert not admissibility(st2, d, P1)
    plan = plan_flush(st2, d, P1, rng=np.random.default_rng(0))
    assert plan.info["attempts"] >= 2
    sim = execute(plan.injections, st2, d, P1, plan.t_end)
    assert sim.state().k == 0 and sim.halted is None


def test_flush_rejects_inadmissible():
    d = DomainSpec(2, 0.3)
    trapped = SystemState(0.0, [ParticleState((2.1, 0.0), (0.0, 1.0), 0)], [DiskState(), DiskState()])
    with pytest.raises(NotAdmissible):
        plan_flush(trapped, d, P1)
    stop = SystemState(0.0, [ParticleState((0.2, 0.3), (1.0, 0.0), 0)], [DiskState(), DiskState()])
    assert admissibility(stop, d, P1)


def test_flush_exhaustion_reports_reasons():
    d = DomainSpec(2, 0.3)
    rng = np.random.default_rng(5)
    st0 = random_admissible_state(rng, d, P1)
    with pytest.raises(PlanSearchExhausted) as err:
        plan_flush(st0, d, P1, rng=rng, retries=1, speed_cap=1e-3)
    assert err.value.reasons and err.value.code == "plan_search_exhausted"


def test_flush_with_robustness_probe():
    d = DomainSpec(2, 0.3)
    st0 = SystemState(0.0, [ParticleState((0.3, 0.05), (1.0, 0.0), 0)], [DiskState(), DiskState()])
    plan = plan_flush(st0, d, P1, eps_target=1e-9, rng=np.random.default_rng(1))
    assert plan.report.success and plan.objective["eps_target"] == 1e-9


def test_flush_random_states_small_batch():
    d = DomainSpec(2, 0.3)
    rng = np.random.default_rng(7)
    for _ in range(10):
        st0 = random_admissible_state(rng, d, P1)
        plan = plan_flush(st0, d, P1, rng=rng)
        sim = execute(plan.injections, st0, d, P1, plan.t_end)
        assert sim.state().k == 0 and sim.halted is None and not sim.trapped


def test_deep_disk_fling_uses_wall_bounces():
    # at j = 6 the carrier's return point has no straight line to the opening
    from diskbath.control.omega import check_set_omega
    from diskbath.dynamics import Simulator
    d = DomainSpec(6, 0.3)
    st0 = SystemState.empty(d)
    inj, _ = build_set_omega(Simulator(d, P1, st0.copy(), record=True), 6, 1.0, 0.0, 1.0, 1.0, 1e12, 20.0, "auto")
    rep = check_set_omega(inj, st0, d, P1, 6, 1.0, 1.0)
    assert rep.roster.get(6) == 1 and max(rep.roster) == 6
    assert len(rep.exit_times) == len(inj)
    # speeds near 1e6 leave only ~1e-8 absolute accuracy on omega
    assert rep.residual <= 1e-6
