import json
import subprocess
import sys

import jsonschema
import pytest
import yaml

from fluoro.cli import main
from fluoro.config import schema

FAST = {
    "emitter": {"s0": 2.75},
    "trajectory": {"duration_s": 0.002},
    "analysis": {"windows_s": [1e-9, 2e-9, 3e-9, 5e-9, 10e-9], "window_s": 3e-9, "g2_points": 201,
                 "visibility_s0_grid": [0.1, 1.0, 2.75], "pair_rate_s0_grid": [1.0, 4.0, 9.0]},
    "tomography": {"bootstrap_samples": 4, "n_starts": 3},
}

SCHEMAS = {"chsh.json": "chsh", "scan.json": "scan", "tomography.json": "tomography", "g2.json": "g2",
           "pair_rate.json": "pair_rate", "visibility.json": "visibility", "run_metadata.json": "run_metadata",
           "run_timestamp.json": "run_timestamp"}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "fast.yaml"
    path.write_text(yaml.safe_dump(FAST))
    return path


def listing(d):
    return sorted(p.name for p in d.iterdir())


@pytest.mark.parametrize("command", ["g2", "visibility", "chsh", "scan-window", "tomography", "pair-rate"])
def test_command_outputs_validate(command, config, tmp_path):
    out = tmp_path / "out"
    assert main([command, "--config", str(config), "--out", str(out), "--seed", "3", "--simulate"]) == 0
    names = listing(out)
    assert "run_metadata.json" in names and "run_timestamp.json" in names
    assert not any(n.startswith(".staging") for n in names)
    meta = json.loads((out / "run_metadata.json").read_text())
    assert meta["files"] == [n for n in names if n not in ("run_metadata.json", "run_timestamp.json")]
    for name in names:
        if name in SCHEMAS:
            jsonschema.validate(json.loads((out / name).read_text()), schema(SCHEMAS[name]))


def test_g2_analytic_csv_matches_weak_form(tmp_path):
    import numpy as np

    from fluoro.physics import g2_weak, reference_emitter

    out = tmp_path / "g2"
    assert main(["g2", "--out", str(out)]) == 0
    data = np.loadtxt(out / "g2_weak.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 1], g2_weak(reference_emitter(0.1), data[:, 0]), atol=1e-12)


def test_pair_rate_report(tmp_path):
    import math

    out = tmp_path / "pr"
    assert main(["pair-rate", "--out", str(out)]) == 0
    doc = json.loads((out / "pair_rate.json").read_text())
    gamma = 1 / (2 * 26.5e-9)
    assert doc["rabi_opt_rad_per_s"] == pytest.approx(2 * math.sqrt(2) * gamma, rel=1e-6)
    assert doc["np_max_per_s"] == pytest.approx(gamma / (25 * math.sqrt(5)), rel=1e-9)


def test_tomography_bundled_fixture(tmp_path):
    cfg = tmp_path / "t.yaml"
    cfg.write_text(yaml.safe_dump({"tomography": {"bootstrap_samples": 3}}))
    out = tmp_path / "tomo"
    assert main(["tomography", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "tomography.json").read_text())
    assert 0.84 <= doc["fidelity"] <= 0.90


def test_reruns_are_byte_identical(config, tmp_path):
    for command in ("g2", "chsh", "scan-window"):
        a, b = tmp_path / f"{command}-a", tmp_path / f"{command}-b"
        for d in (a, b):
            assert main([command, "--config", str(config), "--out", str(d), "--seed", "11", "--simulate"]) == 0
        assert listing(a) == listing(b)
        for name in listing(a):
            if name != "run_timestamp.json":
                assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_zero_duration_is_config_error(tmp_path):
    cfg = tmp_path / "zero.yaml"
    cfg.write_text(yaml.safe_dump({"trajectory": {"duration_s": 0.0}}))
    out = tmp_path / "zero"
    assert main(["chsh", "--config", str(cfg), "--out", str(out)]) == 1
    assert not out.exists() or listing(out) == []


def test_unknown_key_is_config_error(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("emitter:\n  colour: red\n")
    assert main(["g2", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_missing_config_is_io_error(tmp_path):
    assert main(["g2", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["g2", "--out", str(blocker / "sub")]) == 2


def test_bad_thread_env_is_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("FLUORO_THREADS", "many")
    assert main(["g2", "--out", str(tmp_path / "o")]) == 1


def test_nothing_written_outside_out(config, tmp_path):
    out = tmp_path / "only"
    before = set(tmp_path.iterdir())
    assert main(["chsh", "--config", str(config), "--out", str(out)]) == 0
    assert set(tmp_path.iterdir()) - before == {out}


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "fluoro.cli", "pair-rate", "--out", str(tmp_path / "e")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "e" / "pair_rate.png").exists()
