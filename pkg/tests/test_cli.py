import subprocess
import sys

import pytest

from pilothop.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, load_experiment_config, main
from pilothop.estimator import DelayEstimate
from pilothop.harness import read_csv

FAST = ["--n-t", "8", "--n-sch", "4", "--trials", "2", "--snr-list", "10,30"]


def test_simulate_writes_csv(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["simulate", *FAST, "--doppler-hz", "100", "--out", str(out)]) == EXIT_OK
    recs = read_csv(out)
    assert {(r.estimator, r.snr_db) for r in recs} == {("PH", 10.0), ("PH", 30.0), ("LL", 10.0), ("LL", 30.0)}
    assert all(r.f_d == 100.0 and r.trials == 2 for r in recs)


def test_simulate_stdout_single_estimator(capsys):
    assert main(["simulate", *FAST, "--estimator", "ll", "--esprit", "ls", "--beta", "3"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("estimator,") and len(lines) == 3
    assert all(line.startswith("LL,") for line in lines[1:])


def test_simulate_preset_with_override(tmp_path):
    out = tmp_path / "fig1.csv"
    assert main(["simulate", "--preset", "fig1", "--estimator", "ll", "--n-sch", "4",
                 "--trials", "1", "--snr-list", "20", "--out", str(out)]) == EXIT_OK
    assert sorted(r.n_t for r in read_csv(out)) == [96, 192, 387]


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", *FAST, "--seed", "7", "--out", str(a)])
    main(["simulate", *FAST, "--seed", "7", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_config_file(tmp_path):
    prof = tmp_path / "p.txt"
    prof.write_text("0 0\n300 -2\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(
        "[system]\nbw_hz = 10e6\n\n[experiment]\nn_t = 8\nn_sch = 4\nn_trials = 2\n"
        "snr_db_list = 5, 15\nf_d_hz = 50\nprofile_path = p.txt\nesprit_mode = ls\n"
    )
    loaded = load_experiment_config(cfg)
    assert loaded.snr_db_list == (5.0, 15.0) and loaded.f_d == 50.0 and loaded.esprit_mode == "LS"
    assert loaded.profile().n_taps == 2
    out = tmp_path / "o.csv"
    assert main(["simulate", "--config", str(cfg), "--trials", "1", "--out", str(out)]) == EXIT_OK
    assert {r.trials for r in read_csv(out)} == {1}


def test_estimate_dump_delays(capsys):
    assert main(["estimate", "--dump-delays", "--n-t", "32", "--snr-db", "30"]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    eta, L, taus = DelayEstimate.parse_record(line)
    assert 0 < eta <= 1 and L == len(taus) >= 1


def test_estimate_human_readable(capsys):
    assert main(["estimate", "--n-t", "16"]) == EXIT_OK
    assert "support:" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["simulate", "--beta", "9"],
    ["simulate", "--nu", "2"],
    ["simulate", "--n-sch", "40"],
    ["simulate", "--estimator", "mmse"],
    ["simulate", "--snr-list", "a,b"],
    ["simulate", "--preset", "fig1", "--config", "x.ini"],
    ["frobnicate"],
])
def test_config_errors_exit_nonzero(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nn_t = 8\ncolour = red\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
    cfg.write_text("not an ini file\n")
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG


def test_io_errors_exit_nonzero(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.ini")]) == EXIT_IO
    assert main(["simulate", *FAST, "--profile", str(tmp_path / "none.txt")]) == EXIT_IO
    assert main(["simulate", *FAST, "--out", str(tmp_path / "no" / "dir.csv")]) == EXIT_IO


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pilothop.cli", "estimate", "--dump-delays", "--n-t", "8"],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    assert len(res.stdout.split()) >= 3
    res = subprocess.run([sys.executable, "-m", "pilothop.cli", "simulate", "--beta", "-1"],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode != 0 and "beta" in res.stderr
