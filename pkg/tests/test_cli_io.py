import csv
import io
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from covsteer.cli import run_command
from covsteer.io import IoError, RunResult, export_results, problem_digest, read_json
from covsteer.montecarlo import simulate
from covsteer.problem import export_problem, load_problem

from conftest import PLANAR, ROOT

GOLDEN = ROOT / "docs" / "golden" / "planar_solve.json"
# solver-path details that legitimately vary across platforms and versions
VOLATILE = {("timings_ms",), ("tool_version",), ("summary", "conic", "iterations"),
            ("summary", "conic", "residuals")}


def assert_close_record(a, b, path=()):
    if path in VOLATILE:
        return
    if isinstance(b, dict):
        assert set(a) == set(b), path
        for k in b:
            assert_close_record(a[k], b[k], path + (k,))
    elif isinstance(b, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            assert_close_record(x, y, path)
    elif isinstance(b, float):
        assert math.isclose(a, b, rel_tol=1e-6, abs_tol=1e-6), (path, a, b)
    else:
        assert a == b, path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def diag(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_solve_writes_records(tmp_path, capsys):
    assert run_command(["solve", "--config", str(PLANAR), "--out", str(tmp_path)]) == 0
    rec = read_json(tmp_path / "result.json")
    assert rec["command"] == "solve"
    assert rec["summary"]["conic"]["status"] == "optimal"
    assert len(read_csv(tmp_path / "trajectory.csv")) == 61
    assert (tmp_path / "trajectory.png").stat().st_size > 0


def test_solve_matches_golden(tmp_path, capsys):
    assert run_command(["solve", "--config", str(PLANAR), "--out", str(tmp_path), "--no-plots"]) == 0
    assert not (tmp_path / "trajectory.png").exists()
    assert_close_record(read_json(tmp_path / "result.json"), read_json(GOLDEN))


def test_solve_to_stdout(capsys):
    assert run_command(["solve", "--config", str(PLANAR), "--lambda", "0.5"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["options"]["lambda"] == 0.5


def test_rerun_identical_up_to_timings(tmp_path, capsys):
    for d in ("a", "b"):
        run_command(["solve", "--config", str(PLANAR), "--out", str(tmp_path / d), "--no-plots"])
    a, b = (read_json(tmp_path / d / "result.json") for d in ("a", "b"))
    a.pop("timings_ms"), b.pop("timings_ms")
    assert a == b


def test_dump_program(tmp_path, capsys):
    dump = tmp_path / "prog.txt"
    assert run_command(["solve", "--config", str(PLANAR), "--dump-program", str(dump)]) == 0
    text = dump.read_text()
    assert "vars 363" in text


def test_compare_table(tmp_path, capsys):
    assert run_command(["compare", "--config", str(PLANAR), "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    J = {r["method"]: float(r["J"]) for r in rows}
    assert J["sdp"] <= J["ccp_full"] + 1e-6
    assert J["ccp_full"] <= J["ccp_blockdiag"] + 1e-6
    assert (tmp_path / "compare.png").exists()
    assert len(read_json(tmp_path / "compare.json")["table"]) == 3


def test_sweep_lambda(tmp_path, capsys):
    args = ["sweep-lambda", "--config", str(PLANAR), "--values", "0.5,2.0,50", "--out", str(tmp_path)]
    assert run_command(args) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    w2 = [float(r["terminal_w2"]) for r in rows]
    assert w2[0] > w2[1] > w2[2]
    assert len(read_csv(tmp_path / "sweep_lambda_50.csv")) == 61
    assert (tmp_path / "sweep.png").exists()


def test_simulate(tmp_path, capsys):
    args = ["simulate", "--config", str(PLANAR), "--rollouts", "2000", "--seed", "4", "--out", str(tmp_path)]
    assert run_command(args) == 0
    assert len(read_csv(tmp_path / "rollouts.csv")) == 61
    rec = read_json(tmp_path / "rollouts.json")
    assert rec["options"]["seed"] == 4
    assert (tmp_path / "rollouts.png").exists()


def test_bench(tmp_path, capsys):
    args = ["bench", "--config", str(PLANAR), "--horizons", "5,10", "--repeats", "1", "--out", str(tmp_path)]
    assert run_command(args) == 0
    rec = read_json(tmp_path / "bench.json")
    assert [r["N"] for r in rec["table"]] == [5, 10]
    assert math.isfinite(rec["loglog_slope"])


@pytest.mark.parametrize("argv", [
    [],
    ["solve"],
    ["frobnicate", "--config", "x"],
    ["sweep-lambda", "--config", str(PLANAR), "--values", "a,b"],
    ["simulate", "--config", str(PLANAR), "--rollouts", "1"],
])
def test_usage_errors(argv, capsys):
    assert run_command(argv) == 1
    assert diag(capsys)["error"] == "usage"


def test_bad_config_is_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(PLANAR.read_text().replace("lambda: 2.0\n", ""))
    assert run_command(["solve", "--config", str(bad)]) == 1
    d = diag(capsys)
    assert d["error"] == "input" and "lambda" in d["message"]


def test_solve_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "tight.yaml"
    cfg.write_text(PLANAR.read_text() + "  max_iter: 1\n")
    assert run_command(["solve", "--config", str(cfg)]) == 2
    d = diag(capsys)
    assert d["error"] == "solve" and d["stage"] == "conic_solve"


def test_io_errors(tmp_path, capsys):
    assert run_command(["solve", "--config", str(tmp_path / "missing.yaml")]) == 3
    assert diag(capsys)["error"] == "io"
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_command(["solve", "--config", str(PLANAR), "--out", str(blocker / "sub")]) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "covsteer", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "covsteer" in out.stdout


def test_digest_stable_under_reserialization(planar):
    assert problem_digest(load_problem(export_problem(planar))) == problem_digest(planar)


def test_json_round_trip(tmp_path, planar):
    rr = RunResult("solve", problem_digest(planar), {"x": 1}, {"J": 1.5, "steps": []}, {"t": 2.0})
    export_results(rr, tmp_path / "r.json")
    assert read_json(tmp_path / "r.json") == rr.to_dict()


def test_export_stats_csv(tmp_path, planar):
    from covsteer.moments import RandomizedStateFeedbackPolicy

    stats = simulate(planar, RandomizedStateFeedbackPolicy.zero(2, 1, 60), 10, seed=0)
    rows = read_csv(export_results(stats, tmp_path / "s.csv", "csv"))
    assert len(rows) == 61
    assert float(rows[0]["Sigma_0_1"]) == pytest.approx(stats.sample_cov[0, 0, 1])


def test_export_rejects_nonfinite(tmp_path):
    with pytest.raises(ValueError):
        export_results({"J": float("nan")}, tmp_path / "x.json")


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    with pytest.raises(IoError):
        export_results({"J": 1.0}, blocker / "x.json")
