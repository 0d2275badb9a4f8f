"""
Tests for the workbench command line: outputs, manifest and determinism
"""

import json
import os
from textwrap import dedent

import numpy as np
import pytest
from scipy.sparse.linalg import ArpackNoConvergence

from waveguide_scattering.cli import run_workbench
from waveguide_scattering.cli.config import parse_config
from waveguide_scattering.cli.run_workbench import main, run
from waveguide_scattering.scattering.export import read_matrix_json
from waveguide_scattering.utilities.file_utils import check_identical_files, sha256_of_file

SCATTER_OUTPUTS = [
    f"{stem}_{i:03d}.{ext}"
    for i in range(2)
    for stem, ext in (
        ("S_augmented", "json"),
        ("S_classical", "json"),
        ("T_classical", "json"),
        ("field", "txt"),
        ("transforms", "csv"),
    )
]


def test_scatter_run(run_config, tmp_path):
    manifest = run(run_config, out=str(tmp_path))
    assert manifest.exit_code == 0
    assert sorted(manifest.outputs) == sorted(SCATTER_OUTPUTS)
    for name, digest in manifest.outputs.items():
        assert sha256_of_file(tmp_path / name) == digest
    assert [s["error"] for s in manifest.stages] == [None] * 3

    with open(tmp_path / "manifest.json") as f:
        written = json.load(f)
    assert written["outputs"] == manifest.outputs
    assert written["config"]["seed"] == 7

    entries, metadata = read_matrix_json(str(tmp_path / "T_classical_001.json"))
    assert metadata["kind"] == "T_matrix"
    assert metadata["k"] == 2.5
    assert np.allclose(np.abs(entries), [[0, 1], [1, 0]], atol=1e-6)
    augmented, metadata = read_matrix_json(str(tmp_path / "S_augmented_000.json"))
    assert augmented.shape == (4, 4)
    assert metadata["unitarity_defect"] <= 1e-3


def test_runs_are_reproducible(run_config, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    run(run_config, out=str(first))
    run(run_config, out=str(second))
    check_identical_files(str(second), str(first))


def test_seed_changes_only_the_transforms(run_config, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    run(run_config, out=str(first))
    manifest = run(run_config, out=str(second), seed=8)
    assert manifest.config["seed"] == 8
    for name in SCATTER_OUTPUTS:
        same = sha256_of_file(first / name) == sha256_of_file(second / name)
        assert same != name.startswith("transforms_"), name


def test_eigensolver_failure_is_a_stage_error(run_config, tmp_path, monkeypatch):
    def no_convergence(problem):
        raise ArpackNoConvergence("ARPACK error -1: No convergence", np.zeros(0), np.zeros((0, 0)))

    monkeypatch.setattr(run_workbench, "classical_T", no_convergence)
    manifest = run(run_config, out=str(tmp_path))
    assert manifest.exit_code == 1
    scatter = [s for s in manifest.stages if s["name"].startswith("scatter")]
    assert len(scatter) == 2
    assert all("ArpackNoConvergence" in s["error"] for s in scatter)
    assert os.path.exists(tmp_path / "manifest.json")


def test_spectrum_command(conf_file, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["spectrum", "-c", conf_file, "-o", str(tmp_path), "-q"])
    assert e.value.code == 0
    with open(tmp_path / "spectrum.csv") as f:
        lines = f.read().splitlines()
    assert lines[0] == "arm,n,mu,mu_h,threshold,threshold_h"
    # 8 modes for each of the two arms
    assert len(lines) == 1 + 16
    assert os.path.exists(tmp_path / "pencil.csv")


def test_model_problem_run(tmp_path):
    config = parse_config(
        text=dedent(
            """
            [run]
            command = model-problem
            [numerics]
            t = 20
            [model]
            amplitude = 0.02
            """
        )
    )
    manifest = run(config, out=str(tmp_path))
    assert manifest.exit_code == 0
    assert list(manifest.outputs) == ["model_problem.csv"]
    stage = next(s for s in manifest.stages if s["name"] == "model problem T=20")
    assert stage["residuals"]["contraction_ratio"] < 1
    assert stage["residuals"]["pairing_deviation"] <= 1e-5


def test_bad_config_exits_with_code_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[physics]\nk = -1\n")
    with pytest.raises(SystemExit) as e:
        main(["scatter", "-c", str(bad), "-o", str(tmp_path / "out"), "-q"])
    assert e.value.code == 2
    assert not os.path.exists(tmp_path / "out")
    with pytest.raises(SystemExit) as e:
        main(["scatter", "-c", str(tmp_path / "missing.ini"), "-q"])
    assert e.value.code == 2


def test_failed_stage_sets_the_exit_code(tmp_path):
    config = parse_config(
        text=dedent(
            """
            [run]
            command = scatter
            [physics]
            k = 3.14159265358979
            [numerics]
            divisions = 16
            """
        )
    )
    manifest = run(config, out=str(tmp_path))
    assert manifest.exit_code == 1
    assert "ThresholdCollisionError" in manifest.stages[-1]["error"]
    assert manifest.outputs == {}
