from __future__ import annotations

import json
from pathlib import Path

import pytest

from gridcascade.cli import main

CASES = Path(__file__).parents[1] / "cases"
BLOCKS8 = str(CASES / "twoblocks8.json")
MESH30 = str(CASES / "mesh30.json")


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_decompose(capsys):
    code, out, _ = run_cli(capsys, "decompose", BLOCKS8)
    assert code == 0
    payload = json.loads(out)
    assert sorted(map(sorted, payload["areas"])) == [[1, 2, 3, 4], [5, 6, 7, 8]]
    assert payload["bridges"] == [6]


def test_decompose_mesh_single_area_per_block(capsys):
    code, out, _ = run_cli(capsys, "decompose", MESH30)
    assert code == 0
    payload = json.loads(out)
    assert len(payload["areas"]) == 2
    assert payload["bridges"] == [43]


def test_decompose_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    code, _, err = run_cli(capsys, "decompose", str(bad))
    assert code == 2
    assert "error" in err


def test_plan_safe_switch_off(tmp_path, capsys):
    code, out, err = run_cli(
        capsys, "--out", str(tmp_path), "plan", MESH30, "--lines", "16",
    )
    assert code == 0, err
    payload = json.loads(out)
    revised = Path(payload["revised_case"])
    assert revised.exists()
    # switched-off line is recorded out of service in the revised case
    doc = json.loads(revised.read_text())
    line16 = next(ln for ln in doc["lines"] if ln["id"] == 16)
    assert line16["in_service"] is False


def test_plan_overload_refused_unless_forced(tmp_path, capsys):
    # removing most of one block's ring forces heavy reroute; find a line
    # whose removal overloads something
    import gridcascade.caseio as caseio
    from gridcascade.errors import CreatesOverload, DisconnectsLoad, UnknownLine
    from gridcascade.topology import switch_off_lines

    net = caseio.case_to_network(
        caseio.parse_case_json(Path(BLOCKS8).read_bytes()))
    target = None
    for ln in net.in_service_lines:
        try:
            switch_off_lines(net, [ln.id])
        except CreatesOverload:
            target = ln.id
            break
        except (DisconnectsLoad, UnknownLine):
            continue
    assert target is not None, "expected an overloading switch-off in the case"
    code, _, err = run_cli(
        capsys, "--out", str(tmp_path), "plan", BLOCKS8, "--lines", str(target),
    )
    assert code == 4
    code, out, err = run_cli(
        capsys, "--out", str(tmp_path), "plan", BLOCKS8,
        "--lines", str(target), "--force",
    )
    assert code == 0
    assert "warning" in err


def test_cascade_non_critical_summary(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "--out", str(tmp_path), "cascade", BLOCKS8,
        "--failure", "3", "--controller", "uc",
    )
    assert code == 0
    assert "stages=1" in out and "lifts=0" in out and "llr=0" in out
    trace = (tmp_path / "cascade_trace.json").read_text().strip().splitlines()
    assert json.loads(trace[0])["index"] == 1


def test_cascade_agc_multi_stage(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "--out", str(tmp_path), "cascade", BLOCKS8,
        "--failure", "1", "--controller", "agc",
    )
    assert code == 0
    stages = int(out.split("stages=")[1].split()[0])
    assert stages >= 2


def test_cascade_unknown_line(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "--out", str(tmp_path), "cascade", BLOCKS8, "--failure", "99",
    )
    assert code == 3
    assert "99" in err


def test_solve_dump(capsys):
    code, out, _ = run_cli(capsys, "solve", BLOCKS8, "--failure", "3")
    assert code == 0
    payload = json.loads(out)
    assert payload["status"] == "optimal"
    assert set(payload) >= {"theta", "omega", "d", "flows", "duals"}


def test_detect_feasible_and_infeasible(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "--out", str(tmp_path), "detect", BLOCKS8,
        "--failure", "3", "--budget", "200000",
    )
    assert code == 0
    assert "Converged" in out and "agrees" in out and "Feasible" in out
    assert (tmp_path / "dual_trace.csv").exists()

    # scale the case up and pinch its control room: the bridge outage then
    # leaves both islands far outside their ranges, which the dual watcher
    # must flag within the default budget
    doc = json.loads(Path(BLOCKS8).read_text())
    for bus in doc["buses"]:
        bus["injection"] = bus["injection"] * 25
        bus["d_lower"] = round(bus["d_lower"] * 0.02, 6)
        bus["d_upper"] = round(bus["d_upper"] * 0.02, 6)
    for ln in doc["lines"]:
        ln["limit"] = ln["limit"] * 25
    pinched = tmp_path / "pinched.json"
    pinched.write_text(json.dumps(doc))
    code, out, _ = run_cli(
        capsys, "--out", str(tmp_path), "detect", str(pinched), "--failure", "6",
    )
    assert code == 0
    assert "CriticalDetected" in out and "agrees" in out and "Infeasible" in out


def test_detect_budget_verdict(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "--out", str(tmp_path), "detect", BLOCKS8,
        "--failure", "3", "--budget", "5",
    )
    assert code == 0
    assert "Budget" in out


def test_study_small_and_deterministic(tmp_path, capsys):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out_dir, jobs in ((out1, "1"), (out2, "2")):
        code, out, err = run_cli(
            capsys, "--out", str(out_dir), "study", BLOCKS8,
            "--controllers", "uc", "agc", "--k", "1",
            "--profiles", "2", "--alphas", "1.0", "--seed", "11",
            "--jobs", jobs,
        )
        assert code == 0, err
        assert (out_dir / "study_report.json").exists()
        assert (out_dir / "study_cells.csv").exists()
    assert (out1 / "study_report.json").read_bytes() == \
        (out2 / "study_report.json").read_bytes()
    a = json.loads((out1 / "study_report.json").read_text())
    # k=1 exhaustive: 11 scenarios per profile per controller
    per_cell = [c for c in a["cells"] if c["controller"] == "uc"][0]
    assert per_cell["n_scenarios"] == 2 * 11


def test_output_dir_env_var(tmp_path, capsys, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("GRIDCASCADE_OUT", str(target))
    code, out, _ = run_cli(capsys, "cascade", BLOCKS8, "--failure", "3")
    assert code == 0
    assert (target / "cascade_trace.json").exists()


def test_study_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"profile_counts": [1], "alphas": [1.0], "seed": 3}))
    code, out, err = run_cli(
        capsys, "--out", str(tmp_path), "study", BLOCKS8,
        "--config", str(cfg), "--controllers", "uc",
    )
    assert code == 0, err
    report = json.loads((tmp_path / "study_report.json").read_text())
    assert report["config"]["seed"] == 3           # from the file
    assert report["config"]["controllers"] == ["uc"]  # flag wins
