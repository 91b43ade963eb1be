import subprocess
import sys

import pytest

from entroflow.cli import main

SHORT = "kind = academic\ntime.T = 0.005\ntime.dt = 1e-4\ntime.M = 1.4\noutput.plots = false\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SHORT)
    return p


def test_run_success(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_file), "--out", str(out)]) == 0
    assert "academic: OK" in capsys.readouterr().out
    assert (out / "diagnostics.csv").exists()


def test_override_applies(cfg_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(cfg_file), "--out", str(out), "--override", "model.c=5"]) == 0
    assert "model.c = 5.0" in (out / "manifest.txt").read_text()


def test_config_error_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("kind = academic\ntime.T = 1\ngrid.dx = -1\n")
    assert main(["validate", str(p)]) == 1
    assert "grid.dx > 0" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 1


def test_solver_error_exit_2(tmp_path, capsys):
    p = tmp_path / "imp.cfg"
    p.write_text("kind = compare-implicit\ntime.T = 0.02\ncompare.dt_implicit = 1e-2\nimplicit.max_iters = 3\n")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "did not converge" in err and "hint:" in err


def test_invariant_violation_exit_3(cfg_file, tmp_path):
    args = ["run", str(cfg_file), "--out", str(tmp_path / "o"), "--override", "model.c=15", "--override",
            "time.dt=0.02", "--override", "time.T=0.2", "--override", "time.allow_cfl_violation=true"]
    assert main(args) == 3


def test_validate_prints_policy(cfg_file, capsys):
    assert main(["validate", str(cfg_file)]) == 0
    out = capsys.readouterr().out
    assert "# positivity_margin = " in out and "time.dt = 0.0001" in out


def test_validate_rejects_cfl_violation(cfg_file):
    assert main(["validate", str(cfg_file), "--override", "time.dt=0.01"]) == 1


def test_plot_command(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    main(["run", str(cfg_file), "--out", str(out)])
    svg = tmp_path / "e.svg"
    assert main(["plot", str(out / "diagnostics.csv"), "--x", "t", "--y", "E1,E2", "-o", str(svg)]) == 0
    text = svg.read_text()
    assert text.count("<polyline") == 2
    assert main(["plot", str(out / "diagnostics.csv"), "--x", "t", "--y", "nope", "-o", str(svg)]) == 1


def test_console_script_module_entry(cfg_file):
    r = subprocess.run([sys.executable, "-m", "entroflow.cli", "validate", str(cfg_file)], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "kind = academic" in r.stdout
