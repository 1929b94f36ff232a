import subprocess
import sys

import pytest

from edgecam.cli import main

FAST = ["--set", "seeds=1", "--set", "epoch_stride=120", "--set", "warmup=64",
        "--set", "batch_size=32", "--set", "gp_fit_days=1"]


def test_simulate_writes_reports(tmp_path, capsys):
    code = main(["simulate", "--days", "1", "--policy", "threshold", "--seed", "3",
                 "--out", str(tmp_path), *FAST])
    assert code == 0
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "daily.csv").exists()
    assert "threshold" in capsys.readouterr().out


def test_sweep_and_dynamic(tmp_path):
    assert main(["sweep-static", "--days", "1", "--costs", "25,85", "--policies", "greedy",
                 "--out", str(tmp_path / "s"), *FAST]) == 0
    assert (tmp_path / "s" / "recall_vs_cost.svg").exists()
    assert main(["dynamic-cost", "--days", "1", "--policies", "alternating",
                 "--out", str(tmp_path / "d"), *FAST]) == 0


def test_config_file_option(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("days = 1\nwarmup_days_excluded = 0\npolicy = greedy\nseeds = 1\nepoch_stride = 300\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_synth_then_backtest(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["synth-trace", "--days", "2", "--history-days", "2", "--out", str(trace)]) == 0
    assert main(["backtest-gp", "--trace", str(trace), "--fit-days", "2",
                 "--out", str(tmp_path / "bt")]) == 0
    assert "rmse_gp" in capsys.readouterr().out
    lines = (tmp_path / "bt" / "forecast_log.csv").read_text().splitlines()
    assert lines[0].startswith("day,camera")


@pytest.mark.parametrize("argv, needle", [
    (["simulate", "--set", "seeds=0"], "seeds:"),
    (["simulate", "--set", "bogus=1"], "bogus:"),
    (["simulate", "--config", "/nonexistent.cfg"], "not found"),
    (["sweep-static", "--costs", "25"], "costs:"),
    (["sweep-static", "--costs", "a,b"], "costs:"),
    (["backtest-gp", "--trace", "/nonexistent.csv"], "nonexistent"),
])
def test_failures_exit_nonzero_with_one_line(argv, needle, capsys, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert err.startswith("error: ")
    assert needle in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edgecam.cli", "simulate", "--set", "seeds=0"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stderr.strip().splitlines() == [proc.stderr.strip()]
