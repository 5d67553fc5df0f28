import json

from diskbath.cli import main
from diskbath.config import load_state, save_state
from diskbath.dynamics import DiskState, ParticleState, SystemState


def _cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _json(path):
    return json.loads(path.read_text())


def test_simulate_replicas_and_determinism(tmp_path):
    cfg = _cfg(tmp_path, "geometry.n_disks = 2\nrun.t_end = 40.0\nrun.replicas = 3\nrun.seed = 4\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    logs = sorted(p.name for p in (tmp_path / "a").glob("events_r*.jsonl"))
    assert logs == ["events_r000.jsonl", "events_r001.jsonl", "events_r002.jsonl"]
    for name in logs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = _json(tmp_path / "a" / "summary.json")
    assert summary["format"] == "diskbath-summary/1"
    assert "SeedSequence" in summary["seed_splitting"]
    assert len(summary["replicas"]) == 3
    first = (tmp_path / "a" / logs[0]).read_text().splitlines()[0]
    assert json.loads(first)["format"] == "diskbath-eventlog/1"


def test_parallel_replicas_match_serial(tmp_path):
    base = "run.t_end = 30.0\nrun.replicas = 2\nrun.seed = 8\n"
    assert main(["simulate", "--config", _cfg(tmp_path, base, "s.cfg"), "--out", str(tmp_path / "s")]) == 0
    par = _cfg(tmp_path, base + "run.jobs = 2\n", "p.cfg")
    assert main(["simulate", "--config", par, "--out", str(tmp_path / "p")]) == 0
    for r in ("events_r000.jsonl", "events_r001.jsonl"):
        assert (tmp_path / "s" / r).read_bytes() == (tmp_path / "p" / r).read_bytes()


def test_trapped_flag(tmp_path):
    st = SystemState(0.0, [ParticleState((2.1, 0.0), (0.0, 1.0), 0)], [DiskState(), DiskState()])
    save_state(st, tmp_path / "init.json")
    cfg = _cfg(tmp_path, 'geometry.n_disks = 2\nbaths.rate = 0\nrun.t_end = 10.0\ninitial.state = "init.json"\n')
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = _json(tmp_path / "o" / "summary.json")
    assert "Trapped" in summary["flags"]
    assert summary["replicas"][0]["flags"]["Trapped"] == [0]


def test_halt_exit_code(tmp_path):
    st = SystemState(0.0, [ParticleState((0.2, 0.0), (1, 0), 0), ParticleState((1.0, 0.8), (0, -1), 1)],
                     [DiskState()])
    save_state(st, tmp_path / "init.json")
    cfg = _cfg(tmp_path, 'baths.rate = 0\nrun.t_end = 5.0\ninitial.state = "init.json"\n')
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    summary = _json(tmp_path / "o" / "summary.json")
    assert summary["replicas"][0]["halt"]["reason"] == "SimultaneousSameDisk"


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, "geometry.n_disks = 1\nbogus = 2\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "line 2" in capsys.readouterr().err


def test_snapshot_round_trip_is_bit_exact(tmp_path):
    st = SystemState(0.1 + 0.2, [ParticleState((1 / 3, -2 / 7), (1e-17, 3.3), 4)], [DiskState(6.2, -1 / 9)])
    save_state(st, tmp_path / "a.json")
    save_state(load_state(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert load_state(tmp_path / "b.json").same_as(st)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DISKBATH_OUT", str(tmp_path / "env"))
    assert main(["path", "--disk", "1", "--theta", "1.0"]) == 0
    d = _json(tmp_path / "env" / "path.json")
    assert d["format"] == "diskbath-path/1" and d["valid"]


def test_plan_omega_on_spinning_disk(tmp_path):
    save_state(SystemState(0.0, [], [DiskState(0.0, 4.0)]), tmp_path / "s.json")
    out = tmp_path / "o"
    assert main(["plan-omega", "--disk", "1", "--omega", "0", "--budget", "1",
                 "--state", str(tmp_path / "s.json"), "--out", str(out)]) == 0
    plan = _json(out / "plan_omega.json")
    assert plan["format"] == "diskbath-plan/1"
    assert plan["report"]["final_state"]["disks"][0]["omega"] == 0.0
    assert plan["report"]["roster"] == {"1": 1}


def test_plan_errors_are_machine_readable(tmp_path):
    cfg = _cfg(tmp_path, "planner.speed_cap = 0.5\n")
    out = tmp_path / "o"
    assert main(["plan-omega", "--config", cfg, "--disk", "1", "--omega", "1", "--budget", "0.001",
                 "--out", str(out)]) == 1
    err = _json(out / "plan_omega.json")
    assert err["format"] == "diskbath-error/1" and err["error"] == "budget_too_tight"


def test_plan_state_and_flush(tmp_path):
    out = tmp_path / "o"
    assert main(["plan-state", "--disk", "1", "--phi", "2.0", "--omega", "-0.5", "--budget", "5",
                 "--out", str(out)]) == 0
    st = SystemState(0.0, [ParticleState((0.3, 0.05), (1.0, 0.0), 0)], [DiskState(), DiskState()])
    save_state(st, tmp_path / "x.json")
    cfg = _cfg(tmp_path, "geometry.n_disks = 2\n")
    assert main(["flush", "--config", cfg, "--state", str(tmp_path / "x.json"), "--seed", "1",
                 "--out", str(out)]) == 0
    plan = _json(out / "flush_plan.json")
    assert plan["report"]["success"] and plan["report"]["final_state"]["particles"] == []


def test_flush_state_size_mismatch(tmp_path):
    save_state(SystemState(0.0, [], [DiskState()]), tmp_path / "x.json")
    cfg = _cfg(tmp_path, "geometry.n_disks = 2\n")
    assert main(["flush", "--config", cfg, "--state", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 3


def test_check_jacobians(tmp_path):
    out = tmp_path / "o"
    assert main(["check-jacobians", "--samples", "1000", "--out", str(out)]) == 0
    lines = (out / "jacobians.csv").read_text().splitlines()
    assert lines[0].startswith("# format: diskbath-table/1")
    assert len(lines) == 1002
    s = _json(out / "jacobians_summary.json")
    assert s["passed"] and s["max_det_discrepancy"] <= 1e-6 and s["max_map_vs_simulator"] <= 1e-10


def test_verify_refuses_unequal_baths(tmp_path, capsys):
    cfg = _cfg(tmp_path, "baths.left.rate = 1.0\n")
    assert main(["verify-equilibrium", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "identical equilibrium baths" in capsys.readouterr().err


def test_verify_negative_control_fails(tmp_path):
    cfg = _cfg(tmp_path, "run.t_end = 20000.0\n")
    out = tmp_path / "o"
    assert main(["verify-equilibrium", "--config", cfg, "--lambda-factor", "2", "--out", str(out)]) == 1
    rep = _json(out / "equilibrium_report.json")
    assert rep["format"] == "diskbath-equilibrium-report/1"
    count = [t for t in rep["tests"] if t["name"] == "count_poisson"][0]
    assert not count["passed"]
    assert (out / "hist_count.csv").read_text().startswith("# format:")


def test_verify_half_temperature_null_passes(tmp_path):
    # the whole battery passes once the marginals use the T/(2m) and T/(2 Theta) variances
    cfg = _cfg(tmp_path, "run.t_end = 60000.0\n")
    out = tmp_path / "o"
    assert main(["verify-equilibrium", "--config", cfg, "--temperature-factor", "0.5",
                 "--out", str(out)]) == 0
    rep = _json(out / "equilibrium_report.json")
    assert all(t["passed"] for t in rep["tests"])
