import json

import pytest

from mwm.cli import ExperimentSpec, main
from mwm.errors import ConfigError
from mwm.machine import MachineConfig


@pytest.mark.parametrize("H,s,K", [(4, 2, 11), (9, 3, 130), (2, 1, 3)])
def test_enumerate(capsys, H, s, K):
    assert main(["enumerate", "-H", str(H), "--max-shut", str(s)]) == 0
    assert capsys.readouterr().out.strip() == f"K={K}"


def test_enumerate_csv(tmp_path, capsys):
    assert main(["enumerate", "-H", "4", "--max-shut", "2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "combinations.csv").read_text().strip().splitlines()
    assert len(rows) == 12


def test_config_file_with_override(tmp_path, capsys):
    cfg = tmp_path / "m.json"
    cfg.write_text(json.dumps({"H": 5, "max_shut": 3}))
    assert main(["enumerate", "--config", str(cfg), "--max-shut", "2"]) == 0
    assert capsys.readouterr().out.strip() == "K=16"


def test_config_errors(tmp_path):
    assert main(["enumerate", "-H", "0"]) == 2
    assert main(["enumerate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["enumerate"]) == 2


def test_bound_single_variable(tmp_path):
    f = tmp_path / "ts.json"
    f.write_text(json.dumps({"theta": [500.0], "sigma": [[4.0]]}))
    assert main(["bound", "--theta-sigma", str(f)]) == 2


def test_bound_and_moments(tmp_path, capsys):
    f = tmp_path / "ts.json"
    f.write_text(json.dumps({"theta": [500.0, 500.0], "sigma": [[4.0, 0.0], [0.0, 4.0]]}))
    assert main(["moments", "--theta-sigma", str(f), "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["e_min"] == pytest.approx(500 - 2 / 3.141592653589793**0.5)
    assert out["meta"]["seed"] == 3 and out["meta"]["integration_tol"] == 1e-4
    assert main(["bound", "--theta-sigma", str(f)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lb_e_min"] <= 500 - 2 / 3.141592653589793**0.5


def test_optimize_needs_f():
    assert main(["optimize", "-H", "7", "--max-shut", "2"]) == 2


def test_optimize_infeasible():
    assert main(["optimize", "-H", "2", "--max-shut", "1", "--f", "0.3", "--starts", "2"]) == 4


def test_optimize_then_simulate(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MWM_SEED", "11")
    out = tmp_path / "run"
    code = main(["optimize", "-H", "4", "--max-shut", "2", "--starts", "2", "--simulate",
                 "--cycles", "5000", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "solution.json").read_text())
    assert report["meta"]["seed"] == 11
    assert report["config"]["f"] == 0.6
    stored = report["simulation"]["mse"]
    capsys.readouterr()
    assert main(["simulate", "--report", str(out / "solution.json"), "--cycles", "5000"]) == 0
    again = json.loads(capsys.readouterr().out)
    assert again["mse"] == stored


def test_simulate_reps(capsys):
    assert main(["simulate", "-H", "4", "--max-shut", "2", "--mu", "294.9,276.7,183.7,66.6",
                 "--cycles", "2000", "--reps", "3", "--seed", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["replications"]) == 3


def test_simulate_too_few_cycles():
    assert main(["simulate", "-H", "4", "--mu", "294.9,276.7,183.7,66.6", "--cycles", "10"]) == 2


def test_densities(tmp_path):
    assert main(["densities", "-H", "4", "--max-shut", "2", "--mu", "150,150,150,150",
                 "--points", "51", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "densities.csv").read_text().strip().splitlines()
    assert rows[0].startswith("x,pdf_1") and len(rows) == 52


def test_table1(capsys):
    assert main(["table", "table1"]) == 0
    out = capsys.readouterr().out
    assert "4 | 245760 | 15" in out


def test_experiment_spec(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentSpec(MachineConfig(4), sim_cycles=999)
    with pytest.raises(ConfigError):
        ExperimentSpec(MachineConfig(4), formats=("xml",))
    spec = ExperimentSpec(MachineConfig(4), output_dir=tmp_path / "x")
    assert spec.output_dir.is_dir()
