import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from src import studies
from src.constants import Constants
from src.errors import QuadratureError
from src.hrma_lab import main


def write_study(tmp_path, velocity="bump", **extra):
    study = {
        "problem": {"polytope": "segment", "velocity": velocity},
        "levels": [2, 4, 8],
        "T": 1.0,
        "s_step": 0.5,
        "x_window": 2.0,
        "x_points": 5,
        "tolerances": {"legendre_resolution": 128},
        "lifespan": {"resolution": 64},
        "ma": {"T": [1.0], "resolutions": [12, 16], "x_window": 2.0},
        "output": str(tmp_path / "out"),
    }
    study.update(extra)
    path = tmp_path / "study.json"
    path.write_text(json.dumps(study))
    return str(path)


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_converge_writes_tables(tmp_path):
    config = write_study(tmp_path)
    assert main(["converge", "--config", config]) == Constants.EXIT_OK
    out = tmp_path / "out"
    for N in (2, 4, 8):
        frame = pd.read_csv(out / f"converge_N{N}.csv")
        assert list(frame.columns) == ["s", "x", "phi", "phi_N", "tilde_phi_N", "E_N", "phi_N_minus_phi"]
        assert len(frame) == 3 * 5
    summary = pd.read_csv(out / "summary.csv")
    assert summary["N"].tolist() == [2, 4, 8]
    assert {"sup_error", "eigenvalue_gap", "fitted_C", "max_E", "min_E"} <= set(summary.columns)
    assert summary["sup_error"].is_monotonic_decreasing
    assert summary["sup_grad_error"].iloc[-1] < summary["sup_grad_error"].iloc[0]
    c2 = pd.read_csv(out / "c2_errors.csv")
    assert list(c2.columns) == ["N", "s", "sup_grad_error", "sup_hess_error"]
    assert len(c2) == 3 * 3
    for N, group in c2.groupby("N"):
        assert summary.loc[summary["N"] == N, "sup_hess_error"].iloc[0] == pytest.approx(group["sup_hess_error"].max())
    assert os.path.exists(out / Constants.LOG_FILE)
    assert len(os.listdir(out / Constants.CACHE_DIR)) == 3


def test_converge_is_byte_identical_across_threads_and_cache(tmp_path):
    config = write_study(tmp_path)
    assert main(["converge", "--config", config, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(["converge", "--config", config, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    # second run in the same directory reads the spectral cache
    assert main(["converge", "--config", config, "--out", str(tmp_path / "a"), "--threads", "2"]) == 0
    for name in ("summary.csv", "converge_N8.csv", "c2_errors.csv"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_zero_velocity_error_is_static(tmp_path):
    config = write_study(tmp_path, velocity="zero")
    assert main(["converge", "--config", config]) == 0
    frame = pd.read_csv(tmp_path / "out" / "converge_N4.csv")
    by_x = frame.groupby("x")["E_N"]
    assert (by_x.max() - by_x.min()).max() <= 1e-12


def test_lifespan_report(tmp_path):
    config = write_study(tmp_path, lifespan={"resolution": 256})
    assert main(["lifespan", "--config", config]) == 0
    report = pd.read_csv(tmp_path / "out" / "lifespan.csv")
    assert report["T_cvx"][0] == pytest.approx(2.0, abs=1e-3)
    assert report["T_smooth"][0] == report["T_cvx"][0]
    assert report["y_star"][0] == pytest.approx(0.5, abs=1e-3)
    profile = pd.read_csv(tmp_path / "out" / "lifespan_profile.csv")
    assert sorted(profile["s"].unique()) == pytest.approx([0.0, 1.0, 2.0, 3.0])
    scan = pd.read_csv(tmp_path / "out" / "singular_scan.csv")
    latest = scan[scan["s"] == scan["s"].max()]
    assert sorted(latest["s"].unique()) == pytest.approx([3.0])
    assert latest[latest["x"].abs() < 1e-12]["singular"].all()
    assert not latest[latest["x"].abs() > 1.0]["singular"].any()


@pytest.mark.parametrize("velocity", ["linear:1,0", "convex-bump"])
def test_lifespan_report_infinite(tmp_path, velocity):
    config = write_study(tmp_path, velocity=velocity)
    assert main(["lifespan", "--config", config]) == 0
    with open(tmp_path / "out" / "lifespan.csv") as f:
        header, row = f.read().splitlines()[:2]
    assert row.split(",")[header.split(",").index("T_cvx")] == "inf"
    assert row.split(",")[header.split(",").index("T_smooth")] == "inf"
    assert not os.path.exists(tmp_path / "out" / "singular_scan.csv")


def test_ma_audit_writes_ladder(tmp_path):
    config = write_study(tmp_path)
    assert main(["ma-audit", "--config", config]) == 0
    summary = pd.read_csv(tmp_path / "out" / "ma_summary.csv")
    assert summary["resolution"].tolist() == [12, 16]
    assert {"total_mass", "singular_mass", "regular_mass", "total_decreasing", "singular_stable"} <= set(summary.columns)
    atoms = pd.read_csv(tmp_path / "out" / "ma_T1_R16.csv")
    assert list(atoms.columns) == ["s", "x", "mass", "singular_flag"]


def test_spectral_cache_command(tmp_path):
    config = write_study(tmp_path)
    assert main(["spectral-cache", "--config", config]) == 0
    table = pd.read_csv(tmp_path / "out" / "spectral_summary.csv")
    assert table["lattice_points"].tolist() == [3, 5, 9]


def test_invalid_ladder_exits_with_config_code(tmp_path):
    config = write_study(tmp_path, levels=[16, 8])
    assert main(["converge", "--config", config]) == Constants.EXIT_CONFIG


def test_unwritable_output_exits_with_io_code(tmp_path):
    config = write_study(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["converge", "--config", config, "--out", str(blocker / "sub")]) == Constants.EXIT_IO


def test_numerical_failure_writes_diagnostics(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        raise QuadratureError("budget exhausted", estimate=0.5, error_estimate=1e-3, rel_tol=1e-8)

    monkeypatch.setattr(studies, "build_spectral_level", failing)
    config = write_study(tmp_path)
    assert main(["converge", "--config", config]) == Constants.EXIT_NUMERICAL
    with open(tmp_path / "out" / Constants.DIAGNOSTICS_FILE) as f:
        payload = json.load(f)
    assert payload["error"] == "QuadratureError"
    assert payload["rel_tol"] == 1e-8
    assert math.isclose(payload["estimate"], 0.5)


@pytest.mark.slow
def test_flagship_convergence_study(tmp_path):
    assert main(["converge", "--config", "flagship", "--out", str(tmp_path), "--threads", "4"]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert summary["N"].tolist() == [8, 16, 32, 64, 128]
    assert summary["sup_error"].is_monotonic_decreasing
    assert summary["fit_residual"][0] <= 0.5
    errors = summary["sup_error"].to_numpy()
    ratios = errors[1:] / errors[:-1]
    assert np.all((ratios >= 0.35) & (ratios <= 0.85))
    # upper side with C frozen at N = 16
    frozen = float(summary.loc[summary["N"] == 16, "sup_error"].iloc[0]) * 16 / math.log(16)
    for N in (32, 64, 128):
        assert float(summary.loc[summary["N"] == N, "max_E"].iloc[0]) <= frozen * math.log(N) / N
    scaled = summary.loc[summary["N"] >= 16, "N_times_gap"].to_numpy()
    assert scaled.max() <= 2 * scaled.min()
    assert scaled.max() <= 10 * scaled[0]
    c2 = pd.read_csv(tmp_path / "c2_errors.csv")
    assert c2["s"].max() < 2.0
    inner = c2[c2["s"] <= 1.5]
    coarse = inner[inner["N"] == 8].set_index("s")
    fine = inner[inner["N"] == 128].set_index("s")
    assert (fine["sup_grad_error"] < coarse["sup_grad_error"]).all()
    assert (fine["sup_hess_error"] < coarse["sup_hess_error"]).all()


@pytest.mark.slow
def test_flagship_ma_audit(tmp_path):
    assert main(["ma-audit", "--config", "flagship", "--out", str(tmp_path), "--threads", "4"]) == 0
    summary = pd.read_csv(tmp_path / "ma_summary.csv")
    smooth = summary[summary["T"] == 1.5]
    kinked = summary[summary["T"] == 3.0]
    assert smooth["total_mass"].is_monotonic_decreasing
    assert smooth["total_mass"].iloc[-1] < 0.05
    assert kinked["singular_share"].iloc[-1] >= 0.9
    assert kinked["singular_stable"].all()


@pytest.mark.slow
def test_linear_velocity_ma_audit(tmp_path):
    assert main(["ma-audit", "--config", "linear-velocity", "--out", str(tmp_path), "--threads", "4"]) == 0
    summary = pd.read_csv(tmp_path / "ma_summary.csv")
    assert summary["total_mass"].is_monotonic_decreasing
    assert summary["singular_mass"].max() == 0.0
