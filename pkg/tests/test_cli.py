"""Command line runner: exit codes, schema validation and reproducible outputs."""

import json
import os
import subprocess
import sys

import pytest
import yaml

from stochlin import io
from stochlin.cli import EXIT_CONFIG, main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _report(out):
    with open(os.path.join(out, "report.json")) as fh:
        return json.load(fh)


def test_linearize_cubic(tmp_path):
    out = str(tmp_path / "o")
    assert main(["linearize", "--config", os.path.join(CONFIGS, "linearize_cubic.yaml"), "--out", out]) == 0
    rep = _report(out)
    assert rep["fixed_point"]["location"][0] == pytest.approx(1.0)
    assert rep["fixed_point"]["classification"] == "StableHyperbolic"
    assert rep["schema_version"] == io.SCHEMA_VERSION
    assert os.path.exists(os.path.join(out, "eigenvalues.csv"))


def test_linearize_rotation_exit_2(tmp_path):
    out = str(tmp_path / "o")
    assert main(["linearize", "--config", os.path.join(CONFIGS, "linearize_rotation.yaml"), "--out", out]) == 2
    assert _report(out)["fixed_point"]["classification"] == "NonHyperbolic"


def test_bad_key_exit_64(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"preset": "cubic"}, "initial_guess": [0.7], "initail_tol": 1e-9})
    assert main(["linearize", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "initail_tol" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"system": {"preset": "cubic"}},
    {"system": {"preset": "unknown"}, "initial_guess": [0.7]},
    {"system": {"drift": ["x1 +"], "diffusion": [["1"]]}, "initial_guess": [0.7]},
    {"system": {"preset": "cubic", "params": {"zzz": 1}}, "initial_guess": [0.7]},
])
def test_invalid_configs(tmp_path, cfg):
    assert main(["linearize", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["linearize", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_expression_system(tmp_path):
    cfg = _write(tmp_path, {"system": {"drift": ["x1 - x1**3"], "diffusion": [["1"]]}, "initial_guess": [0.1]})
    out = str(tmp_path / "o")
    assert main(["linearize", "--config", cfg, "--out", out]) == 0
    assert _report(out)["fixed_point"]["classification"] == "UnstableHyperbolic"


def _girsanov_cfg(**over):
    cfg = {"system": {"preset": "cubic"}, "initial_guess": [0.7], "eps": 0.3, "grid": {"t_end": 0.5, "dt": 0.001},
           "M": 20000, "z0": [0.1], "observables": ["z", "z2", "exp_neg_z2"], "seed": 11}
    cfg.update(over)
    return cfg


def test_girsanov_linear_preset(tmp_path):
    out = str(tmp_path / "o")
    assert main(["girsanov-verify", "--config", os.path.join(CONFIGS, "girsanov_linear.yaml"), "--out", out]) == 0
    rep = _report(out)
    assert rep["equivalence"]["pass"] and rep["equivalence"]["weights"]["std"] == 0.0
    header, rows = io.read_csv(os.path.join(out, "weights_histogram.csv"))
    assert header == ["lo", "hi", "count"] and rows[:, 2].sum() == 20000


def test_girsanov_cubic_pass_and_sabotage(tmp_path):
    ok = str(tmp_path / "ok")
    bad = str(tmp_path / "bad")
    assert main(["girsanov-verify", "--config", _write(tmp_path, _girsanov_cfg(), "a.yaml"), "--out", ok]) == 0
    sab = _girsanov_cfg(u_scale=2.0, M=50000)
    assert main(["girsanov-verify", "--config", _write(tmp_path, sab, "b.yaml"), "--out", bad]) == 1
    assert not _report(bad)["equivalence"]["pass"]


def test_girsanov_degenerate_exit_3(tmp_path):
    cfg = _girsanov_cfg(u_scale=40.0, M=2000, z0=[0.3], calibrate=False, grid={"t_end": 0.5, "dt": 0.01})
    out = str(tmp_path / "o")
    assert main(["girsanov-verify", "--config", _write(tmp_path, cfg), "--out", out]) == 3
    assert _report(out)["error"] == "DegenerateWeights"


def test_slowfast_noiseless(tmp_path):
    out = str(tmp_path / "o")
    assert main(["slowfast", "--config", os.path.join(CONFIGS, "slowfast_noiseless.yaml"), "--out", out]) == 0
    assert _report(out)["concentration"]["exit_fractions"] == [0.0, 0.0, 0.0]


def test_regularity_dirac_is_success(tmp_path):
    out = str(tmp_path / "o")
    cfg = os.path.join(CONFIGS, "regularity_occupation_dirac.yaml")
    assert main(["regularity", "--config", cfg, "--out", out]) == 0
    assert _report(out)["condition"] == "FAIL"


def test_regularity_mollifier(tmp_path):
    out = str(tmp_path / "o")
    cfg = os.path.join(CONFIGS, "regularity_mollifier.yaml")
    assert main(["regularity", "--config", cfg, "--out", out]) == 0


def test_reports_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, _girsanov_cfg(M=3000, radius_R=0.5))
    outs = []
    for i, workers in enumerate([1, 1, 4]):
        out = str(tmp_path / f"o{i}")
        main(["girsanov-verify", "--config", cfg, "--out", out, "--workers", str(workers)])
        outs.append(out)
    for name in ("report.json", "weights_histogram.csv", "martingale.csv", "manifest.json"):
        blobs = {open(os.path.join(o, name), "rb").read() for o in outs}
        assert len(blobs) == 1, name
    meta = json.load(open(os.path.join(outs[2], "meta.json")))
    assert meta["workers"] == 4 and "started" in meta


def test_seed_override_changes_report(tmp_path):
    cfg = _write(tmp_path, _girsanov_cfg(M=2000, calibrate=False))
    main(["girsanov-verify", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["girsanov-verify", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert _report(str(tmp_path / "a"))["seed"] == 11
    assert _report(str(tmp_path / "b"))["seed"] == 12


def test_module_entry_point(tmp_path):
    out = str(tmp_path / "o")
    res = subprocess.run([sys.executable, "-m", "stochlin", "linearize", "--config",
                          os.path.join(CONFIGS, "linearize_rotation.yaml"), "--out", out],
                         capture_output=True, text=True)
    assert res.returncode == 2


def test_csv_roundtrip(tmp_path):
    p = str(tmp_path / "a.csv")
    rows = [[0.1, 1 / 3], [2.0, -1e-300]]
    io.write_csv(p, ["a", "b"], rows)
    header, back = io.read_csv(p)
    assert header == ["a", "b"] and back.tolist() == rows
    assert open(p).readline().startswith("# schema_version=")


def test_content_hash_matches_git_blob():
    # `printf 'hello\n' | git hash-object --stdin`
    assert io.content_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_ensemble_csv(tmp_path):
    import numpy as np

    from stochlin.sde import DiffusionField, TimeGrid, VectorField, simulate_ensemble

    ens = simulate_ensemble(VectorField(1, lambda x: -x), DiffusionField.constant([[1.0]]), 1.0, [0.0],
                            TimeGrid(0, 1, 4), 3, 0)
    p = str(tmp_path / "e.csv")
    io.write_ensemble_csv(p, ens)
    header, rows = io.read_csv(p)
    assert header == ["path_index", "t", "x_1"] and rows.shape == (15, 3)
    np.testing.assert_array_equal(rows[5:10, 2], ens.states[1, :, 0])
