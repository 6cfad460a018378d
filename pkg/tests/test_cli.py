import json
import os
import subprocess
import sys

import numpy as np
import pytest

from stefan_melt import checks as chk
from stefan_melt import cli
from stefan_melt.config import load_config
from stefan_melt.persistence import config_hash, read_csv, write_csv

SMALL_SIM = ["--set", "n=300", "--set", "lam_floor_ratio=0.05"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def assert_self_contained_svg(path):
    text = path.read_text()
    assert text.startswith("<?xml") and text.rstrip().endswith("</svg>")
    rest = text.replace('xmlns="http://www.w3.org/2000/svg"', "")
    for banned in ("href", "<script", "http", "url("):
        assert banned not in rest


def test_spectrum_example_rows_and_residual(tmp_path):
    assert run("spectrum", "--set", "b=1e-3", "--set", "kmax=3", "--out", tmp_path) == cli.EXIT_OK
    meta, names, data = read_csv(tmp_path / "spectrum.csv")
    assert data.shape[0] == 4
    assert "residual" in names
    np.testing.assert_array_equal(data[:, names.index("k")], [0, 1, 2, 3])
    assert np.all(data[:, names.index("residual")] < 1e-8)
    assert meta["command"] == "spectrum"
    report = json.loads((tmp_path / "expansion.json").read_text())
    assert "note" in report["result"]


def test_csv_hash_matches_effective_config(tmp_path):
    argv = ["spectrum", "--set", "b=1e-3", "--set", "kmax=1", "--set", "n=1000"]
    assert run(*argv, "--out", tmp_path) == 0
    _, doc = load_config(None, ["b=1e-3", "kmax=1", "n=1000"], "spectrum")
    meta, _, _ = read_csv(tmp_path / "spectrum.csv")
    assert meta["config_hash"] == config_hash(doc)
    report = json.loads((tmp_path / "expansion.json").read_text())
    assert report["meta"]["config_hash"] == config_hash(doc)


def test_spectrum_sweep_is_byte_identical_across_runs(tmp_path, monkeypatch):
    argv = ["spectrum", "--set", "b=[1e-2,1e-3,1e-4]", "--set", "kmax=1", "--set", "n=1000"]
    monkeypatch.setenv("STEFAN_MELT_THREADS", "1")
    assert run(*argv, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("STEFAN_MELT_THREADS", "3")
    assert run(*argv, "--out", tmp_path / "b") == 0
    for name in ("spectrum.csv", "expansion.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "expansion.json").read_text())["result"]
    assert [e["k"] for e in report["expansion"]] == [0, 1]


def test_modulate_then_fit(tmp_path):
    assert run("modulate", "--out", tmp_path) == 0
    for name in ("trajectory.csv", "fit.json", "rate.svg", "ratio.svg"):
        assert (tmp_path / name).exists()
    assert_self_contained_svg(tmp_path / "rate.svg")
    meta, names, _ = read_csv(tmp_path / "trajectory.csv")
    assert {"log_T_minus_t", "log_lambda"} <= set(names)
    fit = json.loads((tmp_path / "fit.json").read_text())["result"]["fit"]
    assert abs(fit["p"] - 0.5) < 0.02
    assert run("fit", "--out", tmp_path) == 0
    refit = json.loads((tmp_path / "rate_fit.json").read_text())["result"]
    assert refit["input_config_hash"] == meta["config_hash"]
    assert abs(refit["fit"]["p"] - 0.5) < 0.02
    assert_self_contained_svg(tmp_path / "rate_fit.svg")


def test_modulate_is_deterministic(tmp_path):
    assert run("modulate", "--out", tmp_path / "a") == 0
    assert run("modulate", "--out", tmp_path / "b") == 0
    for name in ("trajectory.csv", "fit.json", "rate.svg", "ratio.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_excited_modulate_and_pure_power_fit(tmp_path):
    assert run("modulate", "--set", "regime=excited", "--set", "k=1", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "fit.json").read_text())["result"]
    assert report["expected_p"] == 1.0
    assert report["shooting"]["inside_to_horizon"]
    assert run("fit", "--model", "pure_power", "--out", tmp_path) == 0
    refit = json.loads((tmp_path / "rate_fit.json").read_text())["result"]["fit"]
    assert refit["model"] == "pure_power"
    assert abs(refit["p"] - 1.0) < 0.02


def test_simulate_writes_all_outputs(tmp_path):
    assert run("simulate", *SMALL_SIM, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())["result"]
    assert report["outcome"] == "melted" and report["monotone"]
    snaps = sorted((tmp_path / "snapshots").glob("snapshot_*.csv"))
    assert snaps
    meta, names, _ = read_csv(snaps[0])
    assert names == ("r", "u") and "lam" in meta
    for name in ("trajectory.csv", "decomposition.csv", "nonconcentration.csv"):
        assert "config_hash" in read_csv(tmp_path / name)[0]
    # a floor of 5e-2 stops before the two decades a rate fit needs
    assert "fit" not in report and not (tmp_path / "lambda.svg").exists()


def test_fit_reads_physical_trajectory(tmp_path):
    tau = np.geomspace(1.0, 1e-8, 400)
    t, lam = 1.0 - tau, np.sqrt(tau)
    write_csv(tmp_path / "traj.csv", ("t", "lambda"), np.column_stack((t, lam)).tolist(), {"config_hash": "x"})
    code = run("fit", "--set", f"input={tmp_path / 'traj.csv'}", "--model", "pure_power", "--set", "k=0",
               "--out", tmp_path / "o")
    assert code == 0
    res = json.loads((tmp_path / "o" / "rate_fit.json").read_text())["result"]
    assert abs(res["T"]["T"] - 1.0) < 1e-6
    assert abs(res["fit"]["p"] - 0.5) < 1e-6


def test_verify_subset(tmp_path, capsys):
    names = ["basis_exactness", "reduced_matrix", "exact_identities"]
    assert run("verify", "--set", f"only={json.dumps(names)}", "--out", tmp_path) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith(("PASS", "FAIL"))]
    assert [ln.split()[1].rstrip(":") for ln in lines] == names
    assert all(ln.startswith("PASS") for ln in lines)
    report = json.loads((tmp_path / "verify.json").read_text())["result"]
    assert report["failed"] == []


def test_verify_failure_exits_one(tmp_path, monkeypatch, capsys):
    monkeypatch.setitem(chk.CHECKS, "always_fails", lambda ctx: chk.CheckResult("always_fails", False, "forced"))
    code = run("verify", "--set", 'only=["reduced_matrix", "always_fails"]', "--out", tmp_path)
    assert code == cli.EXIT_CHECK_FAILED
    captured = capsys.readouterr()
    assert "FAIL always_fails: forced" in captured.out
    assert "always_fails" in captured.err
    assert json.loads((tmp_path / "verify.json").read_text())["result"]["failed"] == ["always_fails"]


@pytest.mark.parametrize("argv, needle", [
    (["simulate", "--set", "simulate.foo=1"], "simulate.foo"),
    (["simulate", "--set", "foo=1"], "simulate.foo"),
    (["spectrum", "--set", "kmax=-1"], "spectrum.kmax"),
    (["modulate", "--set", "b_stop=1e-5"], "modulate.b_stop"),
    (["verify", "--set", 'only=["no_such_check"]'], "verify.only"),
    (["fit", "--set", "input=/nonexistent/trajectory.csv"], "fit.input"),
    (["spectrum", "--config", "/nonexistent/config.json"], "not found"),
    (["spectrum", "--set", "broken"], "key=value"),
])
def test_config_errors_exit_two(tmp_path, capsys, argv, needle):
    assert run(*argv, "--out", tmp_path) == cli.EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_unknown_key_in_file_exits_two(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"modulate": {"regime": "stable", "typo": 1}}))
    assert run("modulate", "--config", cfg, "--out", tmp_path) == cli.EXIT_CONFIG
    assert "modulate.typo" in capsys.readouterr().err
    assert not (tmp_path / "trajectory.csv").exists()


@pytest.mark.parametrize("value", ["0", "-2", "many"])
def test_bad_thread_cap_exits_two(tmp_path, monkeypatch, capsys, value):
    monkeypatch.setenv("STEFAN_MELT_THREADS", value)
    assert run("spectrum", "--out", tmp_path) == cli.EXIT_CONFIG
    assert "STEFAN_MELT_THREADS" in capsys.readouterr().err


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("STEFAN_MELT_THREADS", "4")
    assert cli.thread_cap() == 4
    monkeypatch.delenv("STEFAN_MELT_THREADS")
    assert cli.thread_cap() >= 1


def test_runtime_failure_exits_three(tmp_path, capsys):
    t = np.linspace(0.0, 1.0, 50)
    write_csv(tmp_path / "flat.csv", ("t", "lambda"), np.column_stack((t, np.ones_like(t))).tolist(),
              {"config_hash": "x"})
    assert run("fit", "--set", f"input={tmp_path / 'flat.csv'}", "--out", tmp_path) == cli.EXIT_RUNTIME
    assert "RateError" in capsys.readouterr().err


def test_argument_errors_exit_two(capsys):
    assert run("explode") == cli.EXIT_CONFIG
    assert run("--help") == cli.EXIT_OK


def test_console_script(tmp_path):
    env = {**os.environ, "STEFAN_MELT_THREADS": "1"}
    proc = subprocess.run([sys.executable, "-m", "stefan_melt.cli", "spectrum", "--set", "b=1e-3", "--set", "kmax=0",
                           "--set", "n=500", "--out", str(tmp_path)], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "stefan_melt.cli", "spectrum", "--set", "bogus=1", "--out",
                           str(tmp_path)], env=env, capture_output=True, text=True)
    assert proc.returncode == 2
    assert "spectrum.bogus" in proc.stderr
