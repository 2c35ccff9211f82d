import shutil
import subprocess
import sys

import pytest

from fcpsim.cli import EXIT_CONFIG, EXIT_FAULT, EXIT_OK, EXIT_USAGE, main
from fcpsim.config import load_config
from fcpsim.harness import SampleLog


def test_run_shipped(tmp_path, capsys):
    assert main(["run", "validation", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("run_config.yaml", "run_log.csv", "run_metrics.csv", "run_metrics.txt", "run_trajectory.csv"):
        assert (tmp_path / name).exists()
    assert "J.all=" in capsys.readouterr().out


def test_run_by_path(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("name: tiny\ntrajectory: {n_lines: 2}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert len(SampleLog.from_csv(tmp_path / "o" / "run_log.csv")) == 810


def test_seed_and_noise_flags(tmp_path):
    assert main(["run", "validation", "--out", str(tmp_path), "--seed", "7", "--noise-off"]) == EXIT_OK
    cfg = load_config(tmp_path / "run_config.yaml")
    assert cfg.seed == 7 and cfg.plant.sensor_noise_sd == 0.0


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FCPSIM_OUTPUT_ROOT", str(tmp_path))
    cfg = tmp_path / "c.yaml"
    cfg.write_text("name: envrun\ntrajectory: {n_lines: 1}\n")
    assert main(["run", str(cfg)]) == EXIT_OK
    assert (tmp_path / "envrun" / "run_log.csv").exists()


def test_missing_config(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
    assert "absent.yaml" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("name: bad\ntrajectory: {kind: spiral}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "spiral" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["launch"], ["run"], ["study", "nonsense", "validation"], ["run", "x", "--seed", "a"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_fault_exit(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("name: boom\ncontrol: {mode: open_loop, wheel_speed: 1.0e308}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == EXIT_FAULT
    assert (tmp_path / "run_log.csv.partial").exists()
    assert "fault" in capsys.readouterr().err


def test_fit_collinear(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    pts.write_text("force_N,width_mm\n0.2,0.075\n0.55,0.2\n0.9,0.325\n")
    assert main(["fit", str(pts)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "slope=0.357143" in out
    assert "intercept=0.003571" in out


def test_fit_degenerate(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    pts.write_text("0.2,0.1\n0.2,0.2\n")
    assert main(["fit", str(pts)]) == EXIT_CONFIG
    assert "degenerate" in capsys.readouterr().err


def test_fit_bad_row(tmp_path):
    pts = tmp_path / "p.csv"
    pts.write_text("0.2,0.1\n0.3,oops\n")
    assert main(["fit", str(pts)]) == EXIT_CONFIG


def test_tune_small_budget(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("name: t\ntrajectory: {n_lines: 2}\n")
    assert main(["tune", str(cfg), "--budget", "6", "--out", str(tmp_path)]) == EXIT_OK
    assert len((tmp_path / "tune_trace.csv").read_text().splitlines()) == 7
    assert (tmp_path / "best_gains.txt").exists()


def test_study_force_width(tmp_path, capsys):
    assert main(["study", "force-width", "force_width", "--out", str(tmp_path)]) == EXIT_OK
    assert "slope=" in capsys.readouterr().out


def test_study_tilted_comparison(tmp_path, capsys):
    assert main(["study", "tilted-bed", "tilted_comparison", "--out", str(tmp_path)]) == EXIT_OK
    assert "linear-region ratio" in capsys.readouterr().out


def test_console_script(tmp_path):
    exe = shutil.which("fcpsim")
    cmd = [exe] if exe else [sys.executable, "-m", "fcpsim.cli"]
    pts = tmp_path / "p.csv"
    pts.write_text("0.2,0.075\n0.55,0.2\n")
    r = subprocess.run(cmd + ["fit", str(pts)], capture_output=True, text=True)
    assert r.returncode == 0 and "slope=0.357143" in r.stdout
