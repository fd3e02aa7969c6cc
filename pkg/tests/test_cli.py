import json
import subprocess
import sys

import numpy as np
import pytest

from magcalderon.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main

COARSE = ["--set", "domain.h=0.075"]


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("MAGCALDERON_OUTPUT", str(tmp_path))
    return tmp_path / "default"


def _manifest(out, command):
    return json.loads((out / f"manifest_{command}.json").read_text())


def test_assemble_is_idempotent(out):
    assert main(["assemble", *COARSE]) == EXIT_OK
    first = _manifest(out, "assemble")
    data = (out / "operator.bin").read_bytes()
    assert main(["assemble", *COARSE]) == EXIT_OK
    second = _manifest(out, "assemble")
    assert first == second
    assert (out / "operator.bin").read_bytes() == data
    assert first["files"]["grid.csv"]
    assert first["measured"]["nodes"] == 161


def test_zero_potential_manifest_records_reduction(out):
    assert main(["assemble", *COARSE, "--set", "potential.preset=zero"]) == EXIT_OK
    assert _manifest(out, "assemble")["measured"]["reduction"] is True


def test_inadmissible_potential_exits_with_config_error(out, capsys):
    code = main(["assemble", *COARSE, "--set", "potential.preset=constant",
                 "--set", "potential.amplitude=1", "--set", "potential.cap=no"])
    assert code == EXIT_CONFIG
    assert "pi/(8 sqrt(n) r)" in capsys.readouterr().err


def test_bad_lattice_exits_with_config_error(out):
    assert main(["assemble", "--set", "domain.h=0.07"]) == EXIT_CONFIG


def test_unknown_key_in_config_file(tmp_path, out):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[domain]\nh = 0.075\nwidth = 3\n")
    assert main(["assemble", "--config", str(cfg)]) == EXIT_CONFIG


def test_forward_and_linearized_agree_for_linear_model(tmp_path):
    args = [*COARSE, "--set", "model.preset=linear", "--set", "solver.rho=1"]
    assert main(["forward", *args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["forward", "--linearized", *args, "--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "solution.csv").read_bytes()
    assert a == (tmp_path / "b" / "solution.csv").read_bytes()


def test_forward_reports_contraction(out):
    assert main(["forward", *COARSE, "--set", "solver.rho=64"]) == EXIT_OK
    measured = _manifest(out, "forward")["measured"]
    assert measured["contraction_factor"] < 1
    assert measured["final_residual"] <= 1e-8
    sol = np.genfromtxt(out / "solution.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert len(sol) == 161


def test_forward_exits_nonzero_without_contraction(out):
    code = main(["forward", *COARSE, "--set", "model.preset=expm1", "--set", "solver.rho=1e7",
                 "--set", "data.scale=1"])
    assert code == EXIT_NUMERIC


def test_dtn_output_is_deterministic(tmp_path):
    args = ["dtn", *COARSE, "--set", "solver.rho=64", "--set", "data.count=3"]
    assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "dtn.csv").read_bytes() == (tmp_path / "b" / "dtn.csv").read_bytes()
    header = (tmp_path / "a" / "dtn.csv").read_text().splitlines()[0]
    assert header == "g_id,node,value"


def test_invert_writes_coefficients_and_errors(out):
    assert main(["invert", *COARSE]) == EXIT_OK
    errors = np.loadtxt(out / "errors.csv", delimiter=",", skiprows=1)
    assert errors.shape == (3, 2)
    assert np.all(errors[:, 1] <= 0.05)
    for k in (1, 2, 3):
        assert (out / f"coefficient_a{k}.csv").exists()
    assert _manifest(out, "invert")["measured"]["runge_residual"] < 0.1


def test_invert_runge_failure_exits_numeric(out):
    assert main(["invert", *COARSE, "--set", "inverse.gate=1e-6",
                 "--set", "inverse.runge_lambda=1e-8"]) == EXIT_NUMERIC


@pytest.mark.parametrize("study", ["refine-h", "runge-residual"])
def test_study_writes_slope(out, study):
    assert main(["study", study, *COARSE]) == EXIT_OK
    m = _manifest(out, f"study-{study}")
    assert np.isfinite(m["measured"]["slope"])
    assert (out / f"study_{study}.csv").exists()


def test_unknown_study(out):
    assert main(["study", "nope", *COARSE]) == EXIT_CONFIG


def test_verify_prints_pass_lines(capsys):
    assert main(["verify", "1", "3"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[:2] for ln in lines] == [["PASS", "1"], ["PASS", "3"]]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "magcalderon", "assemble", *COARSE,
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "operator.bin" in proc.stdout
