"""Command line entry point.

Exit status: 0 success, 1 failed test or plan, 2 dynamics halt, 3 bad
configuration or input.  Output goes to ``--out`` or, if not given, to
``$DISKBATH_OUT`` (default ``diskbath-out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .baths import bath_streams
from .config import Config, load_config, load_state, parse_config, save_state
from .control import (plan_flush, plan_set_disk_state, plan_set_omega, proper_path_from,
                      validate_proper_path)
from .dynamics import JsonlWriter, Simulator, SystemState
from .ensemble import (equilibrium_battery, equilibrium_mean_count, flux_balance, pool, run_ensemble,
                       thinning_stride)
from .exceptions import ConfigError, DiskBathError, DynamicsHalted, InsufficientSamples, PlanningError
from .jacobian import (InjectionCoords, collision_time, convergence_order, disk_response_map,
                       disk_response_rank_check, injection_jacobian_check, on_locus,
                       random_response_input, response_via_simulator)

EXIT_OK, EXIT_FAIL, EXIT_HALT, EXIT_CONFIG = 0, 1, 2, 3
SEED_SPLITTING = "numpy SeedSequence(seed, spawn_key=(replica, bath_index)); bath 0 left, 1 right"

SUMMARY_FORMAT = "diskbath-summary/1"
REPORT_FORMAT = "diskbath-equilibrium-report/1"
TABLE_FORMAT = "diskbath-table/1"
PATH_FORMAT = "diskbath-path/1"
JACOBIAN_FORMAT = "diskbath-jacobians/1"
ERROR_FORMAT = "diskbath-error/1"


# ---------------------------------------------------------------- output helpers

def _out_dir(args) -> str:
    d = args.out or os.environ.get("DISKBATH_OUT") or "diskbath-out"
    os.makedirs(d, exist_ok=True)
    return d


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def _write_csv(path, header, rows, kind):
    with open(path, "w", newline="") as fh:
        fh.write(f"# format: {TABLE_FORMAT} {kind}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _config(args) -> Config:
    if getattr(args, "config", None):
        return load_config(args.config)
    return parse_config("")


def _state(args, cfg: Config) -> SystemState:
    if getattr(args, "state", None):
        try:
            st = load_state(args.state)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load state {args.state}: {exc}")
        if len(st.disks) != cfg["geometry.n_disks"]:
            raise ConfigError(f"state has {len(st.disks)} disks, config has {cfg['geometry.n_disks']}")
        return st
    init = cfg.initial_state()
    return init if init is not None else SystemState.empty(cfg.domain())


def _plan_error(out, name, exc) -> int:
    _write_json(os.path.join(out, name), {"format": ERROR_FORMAT, "error": exc.code, "message": str(exc),
                                          "reasons": getattr(exc, "reasons", [])})
    print(f"{exc.code}: {exc}", file=sys.stderr)
    return EXIT_FAIL


# ---------------------------------------------------------------- simulate

def _simulate_one(job):
    rc, r, out, record = job
    state = rc.initial.copy() if rc.initial is not None else SystemState.empty(rc.dom)
    sources = bath_streams(rc.baths, rc.seed, r, state.time)
    path = os.path.join(out, f"events_r{r:03d}.jsonl")
    fh = open(path, "w") if record else None
    try:
        sink = JsonlWriter(fh, {"replica": r, "seed": rc.seed, "version": __version__}) if record else None
        sim = Simulator(rc.dom, rc.params, state, sources=sources, record=False, sink=sink)
        halt = None
        try:
            sim.run(rc.t_end)
        except DynamicsHalted as exc:
            halt = {"reason": exc.reason, "time": exc.time, "detail": exc.detail}
    finally:
        if fh is not None:
            fh.close()
    final = sim.state()
    save_state(final, os.path.join(out, f"state_r{r:03d}.json"))
    return {"replica": r, "events": sum(sim.counts.values()), "counts": dict(sim.counts),
            "final_time": final.time, "final_particles": final.k, "halt": halt,
            "flags": {"Trapped": sorted(sim.trapped, key=str),
                      "TangentialStop": list(sim.tangential_stops)},
            "event_log": os.path.basename(path) if record else None}


def cmd_simulate(args) -> int:
    cfg = _config(args)
    rc = cfg.run_config()
    out = _out_dir(args)
    reps = args.replicas if args.replicas is not None else cfg["run.replicas"]
    jobs = [(rc, r, out, cfg["run.record_events"]) for r in range(reps)]
    n_jobs = cfg["run.jobs"]
    if n_jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            rows = list(ex.map(_simulate_one, jobs))
    else:
        rows = [_simulate_one(j) for j in jobs]
    halted = [r for r in rows if r["halt"] is not None]
    summary = {"format": SUMMARY_FORMAT, "version": __version__, "config": cfg.to_dict(),
               "seed": rc.seed, "seed_splitting": SEED_SPLITTING, "replicas": rows,
               "totals": {"events": sum(r["events"] for r in rows),
                          "halted": len(halted),
                          "trapped": sum(len(r["flags"]["Trapped"]) for r in rows),
                          "tangential_stops": sum(len(r["flags"]["TangentialStop"]) for r in rows)},
               "flags": sorted({f for r in rows for f, v in r["flags"].items() if v}
                               | {r["halt"]["reason"] for r in halted})}
    _write_json(os.path.join(out, "summary.json"), summary)
    print(f"{reps} replicas, {summary['totals']['events']} events, flags: {summary['flags'] or 'none'}")
    return EXIT_HALT if halted else EXIT_OK


# ---------------------------------------------------------------- verify-equilibrium

def _hist_rows(x, edges, pdf):
    obs, _ = np.histogram(x, edges)
    n = len(x)
    rows = []
    for i in range(len(edges) - 1):
        a, b = edges[i], edges[i + 1]
        mid = 0.5 * (a + b)
        rows.append([a, b, int(obs[i]), obs[i] / (n * (b - a)) if n else 0.0, pdf(mid)])
    return rows


def cmd_verify(args) -> int:
    cfg = _config(args)
    eq = cfg.equal_equilibrium()
    if eq is None:
        raise ConfigError("verify-equilibrium needs two identical equilibrium baths; "
                          "the invariant measure is only known for equal temperatures and rates")
    T, rho = eq
    rc = cfg.run_config()
    out = _out_dir(args)
    dom, params = rc.dom, rc.params
    reps = args.replicas if args.replicas is not None else cfg["run.replicas"]
    results = run_ensemble(rc, reps, cfg["run.jobs"])
    good = [r for r in results if r.valid]
    stride = cfg["verify.stride"] or thinning_stride(good)
    pooled = pool(good, stride)
    lam = equilibrium_mean_count(dom, rho, params.mass, T)
    lam_null = lam * args.lambda_factor
    T_null = T * args.temperature_factor
    level = float(cfg["verify.level"])
    try:
        reports = equilibrium_battery(pooled, dom, params, rho, T, level, lam=lam_null, T_null=T_null)
    except InsufficientSamples as exc:
        print(f"insufficient samples: {exc}", file=sys.stderr)
        return EXIT_FAIL
    passed = all(r.passed for r in reports)
    bundle = {"format": REPORT_FORMAT, "version": __version__, "config": cfg.to_dict(),
              "seed_splitting": SEED_SPLITTING, "lambda": lam, "lambda_null": lam_null,
              "temperature": T, "temperature_null": T_null, "rate": rho, "stride": stride,
              "snapshots": pooled.n, "replicas": len(results),
              "halted_replicas": [r.replica for r in results if not r.valid],
              "flux": flux_balance(results), "passed": passed,
              "tests": [r.to_dict() for r in reports]}
    _write_json(os.path.join(out, "equilibrium_report.json"), bundle)
    # plot-ready histograms
    from scipy import stats
    kmax = int(pooled.counts.max()) if pooled.n else 0
    _write_csv(os.path.join(out, "hist_count.csv"), ["k", "observed", "expected"],
               [[k, int(np.sum(pooled.counts == k)), pooled.n * stats.poisson.pmf(k, lam)]
                for k in range(kmax + 1)], "count histogram")
    theta = params.inertia(dom.disk_radius)
    hdr = ["lo", "hi", "observed", "density", "expected_density"]
    for j in range(dom.n_disks):
        sd = math.sqrt(T_null / theta)
        _write_csv(os.path.join(out, f"hist_omega_{j + 1}.csv"), hdr,
                   _hist_rows(pooled.omega[:, j], np.linspace(-4 * sd, 4 * sd, 41),
                              lambda x: stats.norm.pdf(x, 0, sd)), f"omega_{j + 1} histogram")
        _write_csv(os.path.join(out, f"hist_phi_{j + 1}.csv"), hdr,
                   _hist_rows(pooled.phi[:, j], np.linspace(0, 2 * math.pi, 33),
                              lambda x: 1 / (2 * math.pi)), f"phi_{j + 1} histogram")
    sd = math.sqrt(T_null / params.mass)
    for i, name in enumerate(("vx", "vy")):
        _write_csv(os.path.join(out, f"hist_{name}.csv"), hdr,
                   _hist_rows(pooled.v[:, i], np.linspace(-4 * sd, 4 * sd, 41),
                              lambda x: stats.norm.pdf(x, 0, sd)), f"{name} histogram")
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: p={r.p_value:.3g} (level {r.level:.3g}, n={r.n})")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------- planners

def _planner_kw(cfg):
    return {"speed_cap": float(cfg["planner.speed_cap"]), "clearance": float(cfg["planner.clearance"]),
            "method": cfg["planner.method"]}


def cmd_plan_omega(args) -> int:
    cfg = _config(args)
    dom, params = cfg.domain(), cfg.params()
    state = _state(args, cfg)
    out = _out_dir(args)
    try:
        plan = plan_set_omega(args.disk, args.omega, args.budget, state, dom, params, **_planner_kw(cfg))
    except PlanningError as exc:
        return _plan_error(out, "plan_omega.json", exc)
    except ValueError as exc:
        raise ConfigError(str(exc))
    _write_json(os.path.join(out, "plan_omega.json"), plan.to_dict())
    rep = plan.report
    achieved = rep.final_state.disks[args.disk - 1].omega
    print(f"target omega {args.omega}, achieved {achieved!r}, roster "
          f"{ {f'D_{k}': v for k, v in sorted(rep.roster.items())} }, {len(plan.injections)} injections")
    return EXIT_OK if rep.success else EXIT_FAIL


def cmd_plan_state(args) -> int:
    cfg = _config(args)
    dom, params = cfg.domain(), cfg.params()
    state = _state(args, cfg)
    out = _out_dir(args)
    try:
        plan = plan_set_disk_state(args.disk, args.phi, args.omega, args.budget, dom, params, state,
                                   speed_cap=float(cfg["planner.speed_cap"]))
    except PlanningError as exc:
        return _plan_error(out, "plan_state.json", exc)
    except ValueError as exc:
        raise ConfigError(str(exc))
    _write_json(os.path.join(out, "plan_state.json"), plan.to_dict())
    d = plan.report.final_state.disks[args.disk - 1]
    print(f"target (phi, omega) = ({args.phi}, {args.omega}), achieved ({d.phi!r}, {d.omega!r})")
    return EXIT_OK if plan.report.success else EXIT_FAIL


def cmd_flush(args) -> int:
    cfg = _config(args)
    dom, params = cfg.domain(), cfg.params()
    state = _state(args, cfg)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else cfg["run.seed"])
    try:
        plan = plan_flush(state, dom, params, args.eps, rng, retries=cfg["planner.retries"],
                          min_window=float(cfg["planner.min_window"]), **_planner_kw(cfg))
    except PlanningError as exc:
        return _plan_error(out, "flush_plan.json", exc)
    _write_json(os.path.join(out, "flush_plan.json"), plan.to_dict())
    print(f"flushed {state.k} particles with {len(plan.injections)} injections "
          f"({plan.info['attempts']} attempts); final particles: {plan.report.final_state.k}")
    return EXIT_OK if plan.report.success else EXIT_FAIL


def cmd_path(args) -> int:
    cfg = _config(args)
    dom, params = cfg.domain(), cfg.params()
    out = _out_dir(args)
    if args.disk is not None:
        if not 1 <= args.disk <= dom.n_disks:
            raise ConfigError(f"disk {args.disk} out of range 1..{dom.n_disks}")
        start = dom.point_on_disk(args.disk, args.theta)
    elif args.point is not None:
        start = tuple(args.point)
    else:
        raise ConfigError("give --disk/--theta or --point")
    rng = np.random.default_rng(args.seed) if args.seed is not None else None
    try:
        path = proper_path_from(start, dom, velocity=tuple(args.velocity) if args.velocity else None,
                                rng=rng, delta=args.delta)
    except ValueError as exc:
        raise ConfigError(str(exc))
    except PlanningError as exc:
        return _plan_error(out, "path.json", exc)
    ok, why = validate_proper_path(path, dom, params)
    d = {"format": PATH_FORMAT, "valid": ok, "violations": why, **path.to_dict()}
    _write_json(os.path.join(out, "path.json"), d)
    print(f"{path.n_segments} segments, {'valid' if ok else 'INVALID: ' + '; '.join(why)}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- jacobians

DET_TOL = 1e-6
ROW_TOL = 1e-6
MAP_TOL = 1e-10
RANK_RATIO = 1e4


def jacobian_rows(n: int, seed: int, R: float = 0.3):
    """One row per random sample: determinant, omega-row and rank checks, map vs simulator."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        c = InjectionCoords(rng.uniform(0, 1), rng.uniform(-0.9, 0.9), rng.uniform(-1.4, 1.4),
                            rng.uniform(0.2, 3.0))
        det = injection_jacobian_check(c, 2.0)
        inp = random_response_input(rng, R)
        off = disk_response_rank_check(inp, 2.0, R)
        on = disk_response_rank_check(on_locus(inp, R), 2.0, R)
        t = collision_time(*inp[:4], R)[0] + 0.02
        a, b = disk_response_map(inp, t, R), response_via_simulator(inp, t, R)
        diff = [abs(x - y) for x, y in zip(a[:6], b[:6])]
        diff[0] = min(diff[0], 2 * math.pi - diff[0])
        ratio = (off.smallest / off.singular_values[0]) / max(on.smallest / on.singular_values[0], 1e-300)
        rows.append([i, det.analytic, det.numeric, det.discrepancy, off.omega_row_error,
                     off.smallest, on.smallest, ratio, max(diff)])
    return rows


JACOBIAN_HEADER = ["sample", "det_analytic", "det_numeric", "det_rel_discrepancy", "omega_row_rel_error",
                   "sv_min_off_locus", "sv_min_on_locus", "sv_ratio", "map_vs_simulator"]


def cmd_check_jacobians(args) -> int:
    out = _out_dir(args)
    rows = jacobian_rows(args.samples, args.seed, args.radius)
    _write_csv(os.path.join(out, "jacobians.csv"), JACOBIAN_HEADER, rows, "jacobian checks")
    arr = np.array(rows, dtype=float)
    _, orders = convergence_order(InjectionCoords(0.2, 0.1, 0.7, 1.3), 2.0)
    summary = {"format": JACOBIAN_FORMAT, "samples": args.samples, "seed": args.seed,
               "max_det_discrepancy": float(arr[:, 3].max()),
               "max_omega_row_error": float(arr[:, 4].max()),
               "min_sv_ratio": float(arr[:, 7].min()),
               "max_map_vs_simulator": float(arr[:, 8].max()),
               "convergence_orders": orders}
    summary["passed"] = bool(summary["max_det_discrepancy"] <= DET_TOL and summary["max_omega_row_error"] <= ROW_TOL
                             and summary["min_sv_ratio"] >= RANK_RATIO
                             and summary["max_map_vs_simulator"] <= MAP_TOL)
    _write_json(os.path.join(out, "jacobians_summary.json"), summary)
    print(json.dumps(summary))
    return EXIT_OK if summary["passed"] else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diskbath", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="flat key = JSON config file")
        sp.add_argument("--out", help="output directory (default $DISKBATH_OUT or ./diskbath-out)")

    s = sub.add_parser("simulate", help="run replicas, write event logs, snapshots and a summary")
    common(s)
    s.add_argument("--replicas", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify-equilibrium", help="statistical tests of the equilibrium measure")
    common(s)
    s.add_argument("--replicas", type=int)
    s.add_argument("--lambda-factor", type=float, default=1.0, help="scale the null mean count")
    s.add_argument("--temperature-factor", type=float, default=1.0, help="scale the null temperature")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("plan-omega", help="plan injections that set one disk's spin")
    common(s)
    s.add_argument("--disk", type=int, required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--budget", type=float, required=True)
    s.add_argument("--state", help="starting snapshot (default: empty system)")
    s.set_defaults(func=cmd_plan_omega)

    s = sub.add_parser("plan-state", help="plan injections that set one disk's angle and spin")
    common(s)
    s.add_argument("--disk", type=int, required=True)
    s.add_argument("--phi", type=float, required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--budget", type=float, required=True)
    s.add_argument("--state", help="starting snapshot of an empty system")
    s.set_defaults(func=cmd_plan_state)

    s = sub.add_parser("flush", help="plan injections that empty the system")
    common(s)
    s.add_argument("--state", required=True)
    s.add_argument("--eps", type=float, default=0.0, help="required robustness to position changes")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_flush)

    s = sub.add_parser("path", help="proper path from a disk point or a moving particle")
    common(s)
    s.add_argument("--disk", type=int)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--point", type=float, nargs=2)
    s.add_argument("--velocity", type=float, nargs=2)
    s.add_argument("--delta", type=float)
    s.add_argument("--seed", type=int, help="randomise the free choices")
    s.set_defaults(func=cmd_path)

    s = sub.add_parser("check-jacobians", help="finite-difference checks of the closed-form maps")
    common(s, config=False)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--radius", type=float, default=0.3)
    s.set_defaults(func=cmd_check_jacobians)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DynamicsHalted as exc:
        print(f"dynamics halted: {exc}", file=sys.stderr)
        return EXIT_HALT
    except DiskBathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
