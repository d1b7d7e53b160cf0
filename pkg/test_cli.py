"""
Test the selftrap-lab command line end to end.

Tests:
1. solve writes the profile table and summary, byte-identical across runs
2. diagnose passes on fresh output and fails on a tampered density
3. Missing u0 and unknown keys exit with code 2 and name the key
4. compare writes the matched Gaussian and passes diagnose
5. evolve of a Gaussian packet reports T_convexity = 0; compare and evolve are
   byte-identical across runs
6. evolve of the self-trapped state stays inside its box; the auto phase
   reaches a caustic before 1/|theta0|
7. Table writers turn infinite values and ragged columns into DataError

Usage:
    python3 -m pytest test_cli.py -v
"""

import csv
import json
import math
import shutil
from pathlib import Path

import pytest

import main
from common.errors import DataError
from common.table_io import write_csv, write_json

CONFIG_DIR = Path(__file__).parent / "config"


def lab(*args) -> int:
    return main.main([str(a) for a in args])


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert lab("solve", "--config", CONFIG_DIR / "selftrap.toml", "--out", out) == 0
    return out


def test_solve_outputs(solved):
    with open(solved / "selftrap_profile.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["q", "rho", "U", "U_cosh_approx", "R"]
    assert len(rows) == 40001 + 1
    # outside the support U is masked, rho exactly zero
    assert rows[1][1] == "0.0" and rows[1][2] == ""

    summary = json.loads((solved / "summary.json").read_text())
    assert summary["u0"] == 1.0
    assert summary["params"]["lambda"] == pytest.approx(2.0)
    assert summary["grid"]["n"] == 40001
    assert summary["q_m"] == pytest.approx(summary["x_m"] / 2.0)
    assert 0.0 <= summary["q_m_uncertainty"] < 1e-6


def test_solve_is_deterministic(solved, tmp_path):
    assert lab("solve", "--config", CONFIG_DIR / "selftrap.toml", "--out", tmp_path) == 0
    for name in ("selftrap_profile.csv", "summary.json"):
        assert (tmp_path / name).read_bytes() == (solved / name).read_bytes(), name


def test_diagnose_passes_on_fresh_output(solved, capsys):
    assert lab("diagnose", solved) == 0
    out = capsys.readouterr().out
    assert "[FAILED]" not in out
    assert "0 failed" in out
    for name in ("normalization", "symmetry", "convexity", "concavity", "log_linear", "closure"):
        assert f"[PASSED] selftrap_profile.csv:{name}" in out
    print("✓ diagnose passed on fresh solve output")


def test_diagnose_detects_tampered_density(solved, tmp_path, capsys):
    shutil.copy(solved / "summary.json", tmp_path / "summary.json")
    with open(solved / "selftrap_profile.csv", newline="") as f:
        rows = list(csv.reader(f))
    with open(tmp_path / "selftrap_profile.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(rows[0])
        for row in rows[1:]:
            writer.writerow([row[0], repr(2.0 * float(row[1]))] + row[2:])

    assert lab("diagnose", tmp_path) == 1
    out = capsys.readouterr().out
    assert "[FAILED] selftrap_profile.csv:normalization" in out


def test_diagnose_without_output(tmp_path, capsys):
    assert lab("diagnose", tmp_path) == 1
    assert "no selftrap-lab output" in capsys.readouterr().err


def test_missing_u0(tmp_path, capsys):
    assert lab("solve", "--out", tmp_path) == 2
    assert "u0 required" in capsys.readouterr().err
    assert not (tmp_path / "summary.json").exists()


def test_invalid_config_values(tmp_path, capsys):
    assert lab("solve", "--set", "selftrap.bogus=1", "--out", tmp_path) == 2
    assert "bogus" in capsys.readouterr().err
    assert lab("solve", "--set", "selftrap.u0=-1", "--out", tmp_path) == 2


def test_compare(tmp_path, capsys):
    assert lab("compare", "--config", CONFIG_DIR / "selftrap.toml", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "compare.json").read_text())
    assert summary["peak_ratio"] > 1.0
    assert summary["sigma"] ** 2 == pytest.approx(summary["second_moment"])
    with open(tmp_path / "compare.csv", newline="") as f:
        assert next(csv.reader(f)) == ["q", "rho_selftrap", "rho_gaussian"]

    assert lab("diagnose", tmp_path) == 0
    out = capsys.readouterr().out
    for name in ("second_moment", "support", "peak_ratio"):
        assert f"[PASSED] compare.csv:{name}" in out


def test_evolve_gaussian(tmp_path, capsys):
    code = lab(
        "evolve", "--config", CONFIG_DIR / "gaussian.toml",
        "--set", "grid.n=1024", "--set", "evolve.t_end=1.0", "--out", tmp_path,
    )
    assert code == 0
    summary = json.loads((tmp_path / "evolution.json").read_text())
    assert summary["initial"] == "gaussian"
    assert summary["T_convexity"] == 0.0
    assert summary["leaked"] is False
    assert summary["samples"] == 6
    assert summary["max_norm_drift"] < 1e-12
    assert set(summary["T_band"]) == {"0.01", "1.0", "100.0"}

    with open(tmp_path / "timeseries.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "norm", "variance", "convexity_min", "theta_min"]
    assert len(rows) == 7
    assert lab("diagnose", tmp_path) == 0
    assert summary["T_convexity_kind"] == "measured"
    assert set(summary["T_conventions"]) == {"configured", "no_window", "no_filter", "no_window_no_filter"}
    assert summary["max_boundary_density"] < 1e-8


def test_compare_is_deterministic(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        assert lab("compare", "--config", CONFIG_DIR / "selftrap.toml", "--out", out) == 0
    for name in ("compare.csv", "compare.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_evolve_is_deterministic(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        assert lab(
            "evolve", "--config", CONFIG_DIR / "gaussian.toml",
            "--set", "grid.n=1024", "--set", "evolve.t_end=1.0", "--out", out,
        ) == 0
    for name in ("timeseries.csv", "evolution.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_evolve_selftrap_focusing(tmp_path):
    assert lab("evolve", "--config", CONFIG_DIR / "focusing.toml", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "evolution.json").read_text())
    assert summary["leaked"] is False
    assert summary["status"] == "completed"
    assert summary["max_boundary_density"] < 1e-9
    assert summary["focusing"]["violations"] == 0
    assert summary["T_convexity_kind"] in ("measured", "lower_bound")
    if summary["T_convexity"] is None:
        assert summary["T_convexity_lower_bound"] > 0.0
    print(f"✓ focusing run, boundary density {summary['max_boundary_density']:.3g}")


def test_evolve_caustic_experiment(tmp_path):
    assert lab("evolve", "--config", CONFIG_DIR / "caustic.toml", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "evolution.json").read_text())
    assert summary["phase"] == "auto"
    assert summary["theta0"] < 0.0
    assert summary["t_near_caustic"] < summary["caustic_bound"]
    assert summary["caustic"]["passed"] is True
    assert summary["caustic"]["bound_violations"] == 0
    assert summary["caustic"]["T0_is_lower_bound"] == (summary["T_convexity_kind"] == "lower_bound")
    assert set(summary["T_conventions"]) == {"configured", "no_window", "no_filter", "no_window_no_filter"}
    assert (tmp_path / "timeseries_focus.csv").exists()
    print(f"✓ caustic at t={summary['t_near_caustic']:.4g} < {summary['caustic_bound']:.4g}")


def test_writers_reject_unserializable_values(tmp_path):
    with pytest.raises(DataError):
        write_csv(tmp_path / "bad.csv", {"q": [0.0, 1.0], "rho": [1.0, math.inf]})
    with pytest.raises(DataError):
        write_csv(tmp_path / "ragged.csv", {"q": [0.0, 1.0], "rho": [1.0]})
    with pytest.raises(DataError):
        write_json(tmp_path / "bad.json", {"T": math.nan})
    assert not (tmp_path / "bad.json").exists()
    # NaN is a masked value in tables
    write_csv(tmp_path / "masked.csv", {"q": [0.0], "U": [math.nan]})
    assert (tmp_path / "masked.csv").read_text() == "q,U\n0.0,\n"
