"""CLI contract tests: exit codes, artifacts, determinism, gen subcommand."""

import json

import numpy as np
import pytest

from akl.cli import main
from akl.config import validate_config
from akl.errors import InvalidConfigurationError
from akl.image_io import read_image


def write_config(tmp_path, payload) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return str(path)


class TestConfigValidation:
    def test_defaults_filled(self):
        cfg = validate_config({"experiment": "bv"})
        assert cfg.seed == 0
        assert cfg.params["image_side"] == 64

    def test_unknown_top_level_key(self):
        with pytest.raises(InvalidConfigurationError):
            validate_config({"experiment": "bv", "threads": 4})

    def test_unknown_param(self):
        with pytest.raises(InvalidConfigurationError):
            validate_config({"experiment": "bv", "params": {"sides": 3}})

    def test_unknown_experiment(self):
        with pytest.raises(InvalidConfigurationError):
            validate_config({"experiment": "bvx"})

    def test_hash_stable(self):
        a = validate_config({"experiment": "bv", "seed": 1})
        b = validate_config({"seed": 1, "experiment": "bv"})
        assert a.config_hash() == b.config_hash()


class TestRunCommand:
    def test_bv_run_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "bv"})
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--output-dir", str(out)]) == 0
        assert (out / "bv.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "provenance.txt").exists()
        assert (out / "bv_image.png").exists()
        assert "3.41421" in (out / "bv.csv").read_text()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["passed"] is True
        assert summary["config_hash"]
        assert summary["seed"] == 0

    def test_unknown_experiment_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "frobnicate"})
        assert main(["run", "--config", cfg, "--output-dir", str(tmp_path / "o")]) == 2

    def test_malformed_json_exits_2(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["run", "--config", str(path), "--output-dir", str(tmp_path / "o")]) == 2

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2

    def test_seed_override_recorded(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "bv", "seed": 3})
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--output-dir", str(out), "--seed", "9"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 9

    def test_determinism_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "kernel", "seed": 2})
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", cfg, "--output-dir", str(out1)]) == 0
        assert main(["run", "--config", cfg, "--output-dir", str(out2)]) == 0
        for name in ("kernel_spectrum.csv", "kernel_decay.csv", "summary.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
        lines1 = [l for l in (out1 / "provenance.txt").read_text().splitlines() if not l.startswith("timestamp:")]
        lines2 = [l for l in (out2 / "provenance.txt").read_text().splitlines() if not l.startswith("timestamp:")]
        assert lines1 == lines2


class TestGenCommand:
    def test_gen_lowfreq_csv(self, tmp_path):
        out = tmp_path / "img.csv"
        assert main(["gen", "--kind", "lowfreq", "--n", "16", "--seed", "4", "--out", str(out)]) == 0
        img = read_image(out)
        assert img.side == 16

    def test_gen_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert main(["gen", "--kind", "lowrank", "--n", "16", "--seed", "5", "--rank", "2", "--out", str(path)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_gen_pgm(self, tmp_path):
        out = tmp_path / "img.pgm"
        assert main(["gen", "--kind", "checkerboard", "--n", "8", "--seed", "0", "--out", str(out)]) == 0
        img = read_image(out)
        assert set(np.unique(img.pixels)) == {0.0, 1.0}

    def test_gen_bad_params_exit_2(self, tmp_path):
        out = tmp_path / "img.csv"
        assert main(["gen", "--kind", "checkerboard", "--n", "9", "--seed", "0", "--cell", "2", "--out", str(out)]) == 2

    def test_usage_error_exit_2(self):
        assert main(["run"]) == 2


class TestThreadCap:
    def test_env_var_caps_workers(self, monkeypatch):
        from akl.experiments import worker_count

        monkeypatch.setenv("AKL_THREADS", "2")
        assert worker_count() == 2
        monkeypatch.setenv("AKL_THREADS", "not-a-number")
        assert worker_count() >= 1

    def test_parallel_map_order_stable(self, monkeypatch):
        from akl.experiments import parallel_map

        monkeypatch.setenv("AKL_THREADS", "4")
        items = list(range(40))
        assert parallel_map(lambda x: x * x, items) == [x * x for x in items]


class TestParameterRangeErrors:
    def test_indivisible_scan_exits_2(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"experiment": "kernel", "params": {"scan_n": [5]}}))
        assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 2
