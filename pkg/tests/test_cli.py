import json
import subprocess
import sys

import pytest
import yaml

from enkibatt.cli import main, run_cli

SHORT = {
    "model": "thevenin",
    "enki": {"members": 24, "max_iter": 3, "seed": 2},
    "simulate": {
        "profile": {"amplitude": 4.0, "pulse_current": 4.0, "duty": 1.0},
        "segments": [{"duration_s": 300, "t_amb": 313.0}, {"duration_s": 300, "t_amb": 283.0}],
    },
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SHORT))
    return path


def test_simulate_is_byte_reproducible(tmp_path, config):
    for name in ("a", "b"):
        out = run_cli(["simulate", "--config", str(config), "--out", str(tmp_path / name)])
        assert out.exit_code == 0, out.summary
    for f in ("cycle.csv", "measurements.csv", "true_params.yaml"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    first = (tmp_path / "a" / "measurements.csv").read_text().splitlines()[0]
    assert first.startswith("# config_hash=") and "seed=2" in first


def test_seed_changes_noise(tmp_path, config):
    run_cli(["simulate", "--config", str(config), "--out", str(tmp_path / "a")])
    run_cli(["simulate", "--config", str(config), "--seed", "3", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "measurements.csv").read_text() != (tmp_path / "b" / "measurements.csv").read_text()


def test_usage_errors_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["validate", "--model", "thevenin"]) == 1  # --params is required
    assert main(["identify", "--data", "x.csv"]) == 1  # neither --config nor --model
    assert "usage" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("enki: {members: 5}\n")
    out = run_cli(["simulate", "--config", str(bad), "--out", str(tmp_path)])
    assert out.exit_code == 2 and "model" in out.summary
    out = run_cli(["identify", "--model", "thevenin", "--cycle", str(tmp_path / "none.csv"),
                   "--data", str(tmp_path / "none.csv")])
    assert out.exit_code == 2


def test_validate_with_true_parameters_on_noiseless_data(tmp_path, config):
    assert run_cli(["simulate", "--config", str(config), "--noiseless", "--out", str(tmp_path)]).exit_code == 0
    out = run_cli([
        "validate", "--config", str(config), "--params", str(tmp_path / "true_params.yaml"),
        "--cycle", str(tmp_path / "cycle.csv"), "--data", str(tmp_path / "measurements.csv"),
        "--out", str(tmp_path),
    ])
    assert out.exit_code == 0, out.summary
    rmse = json.loads((tmp_path / "validation.json").read_text())["rmse"]
    assert rmse == {"voltage": 0.0, "surf_temp": 0.0}
    assert len((tmp_path / "residuals.csv").read_text().splitlines()) == 2 + 600


def test_identify_then_report(tmp_path, config):
    run_cli(["simulate", "--config", str(config), "--out", str(tmp_path)])
    out = run_cli([
        "identify", "--config", str(config), "--cycle", str(tmp_path / "cycle.csv"),
        "--data", str(tmp_path / "measurements.csv"),
        "--ref-params", str(tmp_path / "true_params.yaml"), "--out", str(tmp_path),
    ])
    assert out.exit_code == 0, out.summary
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["provenance"]["seed"] == 2 and "timestamps" not in doc["provenance"]
    assert set(doc["relative_errors_pct"]) == set(doc["parameter_order"])
    rep = run_cli(["report", "--results", str(tmp_path / "results.json"), "--out", str(tmp_path / "rep")])
    assert rep.exit_code == 0, rep.summary
    comparison = (tmp_path / "rep" / "comparison.csv").read_text().splitlines()
    assert comparison[0].startswith("# config_hash=")
    comparison = comparison[1:]
    assert len(comparison) == 1 + 9
    assert [line.split(",")[0] for line in comparison[1:]][:3] == ["R_o", "R_1", "C_1"]
    for name in ("iterations.csv", "boxplots.csv"):
        assert (tmp_path / "rep" / name).read_text().startswith("# config_hash=")
    assert (tmp_path / "true_params.yaml").read_text().startswith("# config_hash=")


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "enkibatt.cli", "report", "--results",
                           str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert proc.returncode == 2 and "data error" in proc.stderr


def test_identify_on_joined_datasets(tmp_path):
    paths = {}
    for name, t in (("warm", 313.0), ("cold", 283.0)):
        cfg = tmp_path / f"{name}.yaml"
        doc = dict(SHORT, simulate={"segments": [{"duration_s": 200, "t_amb": t}]},
                   enki={"members": 40, "max_iter": 4, "seed": 2, "positivity": "log"})
        cfg.write_text(yaml.safe_dump(doc))
        assert run_cli(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)]).exit_code == 0
        paths[name] = tmp_path / name
    base = tmp_path / "warm.yaml"
    out = run_cli([
        "identify", "--config", str(base),
        "--cycle", str(paths["warm"] / "cycle.csv"), str(paths["cold"] / "cycle.csv"),
        "--data", str(paths["warm"] / "measurements.csv"), str(paths["cold"] / "measurements.csv"),
        "--out", str(tmp_path / "joint"),
    ])
    assert out.exit_code == 0, out.summary
    out = run_cli([
        "validate", "--config", str(base), "--params", str(tmp_path / "joint" / "results.json"),
        "--cycle", str(paths["warm"] / "cycle.csv"), str(paths["cold"] / "cycle.csv"),
        "--data", str(paths["warm"] / "measurements.csv"), "--out", str(tmp_path / "joint"),
    ])
    assert out.exit_code == 2 and "one file per" in out.summary
