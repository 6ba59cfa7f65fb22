import json
import sys
from pathlib import Path

import numpy as np
import pytest

from subrie.cli import main
from subrie.flow import Control

sys.path.insert(0, str(Path(__file__).parent))
from oracles import bump_x3, smooth_heisenberg_data  # noqa: E402


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_heisenberg(capsys):
    code, out, _ = run(capsys, "analyze", "heisenberg", "--grid", "3")
    doc = json.loads(out)
    assert code == 0
    assert doc["schema_version"] == "1.0"
    assert doc["config"]["seed"] == 0
    assert doc["regularity"]["verdict"] == "equiregular"
    assert doc["regularity"]["growth_vectors"] == [[2, 3]]


def test_reports_are_deterministic(capsys):
    first = run(capsys, "distance", "heisenberg", "--from", "0,0,0", "--to", "0.3,0.1,0.05",
                "--seed", "4", "--out", "/tmp/subrie-cli-a")[1]
    second = run(capsys, "distance", "heisenberg", "--from", "0,0,0", "--to", "0.3,0.1,0.05",
                 "--seed", "4", "--out", "/tmp/subrie-cli-a")[1]
    assert first == second


def test_distance_writes_control(capsys, tmp_path):
    code, out, _ = run(capsys, "distance", "heisenberg", "--from", "0,0,0", "--to", "1,0,0",
                       "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0
    assert 1.0 <= doc["estimate"]["upper"] <= 1.001
    ctrl = Control.from_csv(Path(doc["control_csv"]).read_text())
    code, out, _ = run(capsys, "flow", "heisenberg", doc["control_csv"], "--p0", "0,0,0",
                       "--samples", "5")
    last = out.strip().splitlines()[-1].split(",")
    assert code == 0 and ctrl.m == 2
    assert np.allclose([float(x) for x in last[1:4]], [1, 0, 0], atol=1e-8)


def test_pliability_heisenberg(capsys):
    code, out, _ = run(capsys, "pliability", "heisenberg", "--point", "0,0,0", "--u", "1,0")
    doc = json.loads(out)
    assert code == 0
    assert doc["flags"]["certificate_found"]
    assert doc["flags"]["medium_fat"]["verdict"]


def test_params_for_builtins(capsys):
    code, out, _ = run(capsys, "analyze", "step3alpha", "--param", "alpha=-1", "--grid", "2")
    assert code == 0
    assert json.loads(out)["regularity"]["growth_vectors"] == [[3, 5, 6]]


def test_input_errors_exit_3(capsys):
    code, _, err = run(capsys, "distance", "heisenberg", "--from", "0,0", "--to", "x,1,2")
    assert code == 3
    assert json.loads(err)["error"] == "InputError"
    code, _, err = run(capsys, "nilpotent", "grushin", "--point", "0,0")
    assert code == 3
    assert "hint" in json.loads(err)
    code, _, _ = run(capsys, "analyze", "missing-structure-file")
    assert code == 3


def test_whitney_verify_reject_exit_code(capsys, tmp_path):
    data = bump_x3(smooth_heisenberg_data(3), 7)
    path = tmp_path / "bumped.csv"
    path.write_text(data.to_csv())
    code, out, _ = run(capsys, "whitney", "verify", "heisenberg", str(path),
                       "--direction", "forward")
    assert code == 1
    assert json.loads(out)["report"]["verdict"] == "reject"


def test_whitney_extend_forced(capsys, tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("t,x1,x2,x3,u1,u2\n0,0,0,0,1,0\n1,0,0,1,1,0\n")
    code, out, _ = run(capsys, "whitney", "extend", "heisenberg", str(path), "--force",
                       "--out", str(tmp_path))
    doc = json.loads(out)
    assert code == 0
    assert doc["extension"]["interpolation_error"] < 1e-6
    assert Path(doc["trajectory_csv"]).exists()


def test_lift_commands(capsys, tmp_path):
    code, out, _ = run(capsys, "lift", "check", "heisenberg->grushin")
    assert code == 0 and json.loads(out)["report"]["exact"]
    path = tmp_path / "g.csv"
    path.write_text("t,x1,x2,u1,u2\n0,-0.2,0.1,0.5,0.2\n0.5,0.05,0.095,0.5,0.2\n")
    code, out, _ = run(capsys, "lift", "lift-data", "heisenberg->grushin", str(path),
                       "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["result"]["projection_error"] < 1e-6


def test_lusin_command(capsys, tmp_path):
    path = tmp_path / "u.csv"
    path.write_text("t,u1,u2\n0,1,0\n1,1,0\n")
    code, out, _ = run(capsys, "lusin", "heisenberg", str(path), "--p0", "0,0,0", "--eps", "0.1",
                       "--out", str(tmp_path))
    assert code == 0
    assert json.loads(out)["result"]["measure_discarded"] == 0.0


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("analyze", "nilpotent", "pliability", "whitney", "lusin", "distance", "flow", "lift"):
        assert cmd in out
