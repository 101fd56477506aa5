"""End-to-end CLI tests: exit codes, artifacts, manifests, reproducibility.

Everything runs in-process through main(); each test gets its own output
directory under tmp_path so runs never interfere.
"""

import gzip
import hashlib
import json
import struct

import numpy as np
import pytest

import advtune as a
from advtune.cli import main


def blob_config(tmp_path, name="config.json", **extra):
    cfg = {
        "dataset": {"kind": "blobs", "classes": 3, "per_class": 40, "dims": 8, "spread": 0.03},
        "split": {"validation_count": 20, "test_count": 20},
        "network": {
            "input_shape": [8],
            "layers": [["dense", 8, 16], ["relu"], ["dense", 16, 3]],
            "classes": 3,
        },
        "train": {
            "ratio": 0.5, "epsilon": 0.1, "epochs": 2, "batch_size": 40,
            "learning_rate": 0.5, "attack_iterations": 4,
        },
        "eval_attack": {"epsilon": 0.1, "step_size": 0.03, "iterations": 4},
        "sweep": {"ratio_values": [0.0, 1.0], "epsilon_values": [0.1], "repetitions": 1},
        "tune": {
            "strategy": "random", "n": 3, "beta": None, "repeats": 2,
            "space": {"ratio_points": 6, "epsilon_points": 6,
                      "epsilon_min": 0.05, "epsilon_max": 0.3},
        },
        "seed": 4400,
    }
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert a.__version__ in capsys.readouterr().out

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2


class TestBaseline:
    def test_artifacts_and_manifest(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        for name in ("params.bin", "metrics.json", "manifest.json"):
            assert (out / name).exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= metrics["acc_val"] <= 1.0
        assert 0.0 <= metrics["acc_test"] <= 1.0
        assert len(metrics["epoch_losses"]) == 2
        assert metrics["samples"] == {"train": 80, "validation": 20, "test": 20}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "baseline"
        assert manifest["seed"] == 4400
        assert manifest["versions"]["advtune"] == a.__version__
        assert manifest["artifacts"]["params.bin"] == sha256(out / "params.bin")
        assert manifest["artifacts"]["metrics.json"] == sha256(out / "metrics.json")

    def test_set_override_lands_in_manifest(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main([
            "baseline", "--config", cfg, "--set", "train.epochs=4",
            "--output", str(out),
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["effective_config"]["train"]["epochs"] == 4
        metrics = json.loads((out / "metrics.json").read_text())
        assert len(metrics["epoch_losses"]) == 4


class TestTrain:
    def test_flags_override_config(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        code = main([
            "train", "--config", cfg, "--ratio", "1.0", "--epsilon", "0.2",
            "--output", str(out),
        ])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["ratio"] == 1.0
        assert metrics["epsilon"] == 0.2
        params = a.load_params(str(out / "params.bin"))
        assert params.count == 8 * 16 + 16 + 16 * 3 + 3

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = blob_config(tmp_path)
        one = tmp_path / "one"
        two = tmp_path / "two"
        assert main(["train", "--config", cfg, "--output", str(one)]) == 0
        assert main(["train", "--config", cfg, "--output", str(two)]) == 0
        assert (one / "params.bin").read_bytes() == (two / "params.bin").read_bytes()
        assert (one / "metrics.json").read_bytes() == (two / "metrics.json").read_bytes()


class TestEval:
    def test_roundtrip_matches_train_metrics(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        evalout = tmp_path / "evalout"
        assert main(["train", "--config", cfg, "--output", str(out)]) == 0
        train_metrics = json.loads((out / "metrics.json").read_text())
        code = main([
            "eval", "--config", cfg, "--params", str(out / "params.bin"),
            "--output", str(evalout),
        ])
        assert code == 0
        eval_metrics = json.loads((evalout / "metrics.json").read_text())
        assert eval_metrics["acc_test"] == train_metrics["acc_test"]
        assert eval_metrics["acc_adv"] == train_metrics["acc_adv"]

    def test_epsilon_zero_collapses_adv_to_clean(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        evalout = tmp_path / "evalout"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        code = main([
            "eval", "--config", cfg, "--params", str(out / "params.bin"),
            "--epsilon", "0", "--output", str(evalout),
        ])
        assert code == 0
        metrics = json.loads((evalout / "metrics.json").read_text())
        assert metrics["acc_adv"] == metrics["acc_test"]
        assert metrics["eval_epsilon"] == 0.0

    def test_limit_subsamples_the_test_split(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        limited = tmp_path / "limited"
        code = main([
            "eval", "--config", cfg, "--params", str(out / "params.bin"),
            "--limit", "7", "--output", str(limited),
        ])
        assert code == 0
        assert json.loads((limited / "metrics.json").read_text())["sample_count"] == 7

        # a limit past the end of the split just means the whole split
        capped = tmp_path / "capped"
        code = main([
            "eval", "--config", cfg, "--params", str(out / "params.bin"),
            "--limit", "99999", "--output", str(capped),
        ])
        assert code == 0
        assert json.loads((capped / "metrics.json").read_text())["sample_count"] == 20

    def test_limit_zero_exits_2(self, tmp_path, capsys):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        evalout = tmp_path / "evalout"
        code = main([
            "eval", "--config", cfg, "--params", str(out / "params.bin"),
            "--limit", "0", "--output", str(evalout),
        ])
        assert code == 2
        assert not evalout.exists()

    def test_missing_params_file_exits_2_without_outputs(self, tmp_path, capsys):
        cfg = blob_config(tmp_path)
        out = tmp_path / "fresh"
        code = main([
            "eval", "--config", cfg, "--params", str(tmp_path / "nope.bin"),
            "--output", str(out),
        ])
        assert code == 2
        assert not out.exists()
        assert "not found" in capsys.readouterr().err

    def test_mismatched_network_exits_3(self, tmp_path, capsys):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        widened = blob_config(
            tmp_path, name="widened.json",
            network={
                "input_shape": [8],
                "layers": [["dense", 8, 24], ["relu"], ["dense", 24, 3]],
                "classes": 3,
            },
        )
        code = main([
            "eval", "--config", widened, "--params", str(out / "params.bin"),
            "--output", str(tmp_path / "evalout"),
        ])
        assert code == 3
        assert "does not fit" in capsys.readouterr().err


class TestConfigErrors:
    def test_unknown_dataset_kind(self, tmp_path, capsys):
        cfg = blob_config(tmp_path, dataset={"kind": "imagenet"})
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 2
        assert not out.exists()

    def test_invalid_attack_epsilon_leaves_no_outputs(self, tmp_path):
        cfg = blob_config(tmp_path, eval_attack={"epsilon": -0.5})
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 2
        assert not out.exists()

    def test_bad_override_value(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        code = main([
            "baseline", "--config", cfg, "--set", "train.epochs=soon",
            "--output", str(out),
        ])
        assert code == 2
        assert not out.exists()

    def test_malformed_override_syntax(self, tmp_path):
        cfg = blob_config(tmp_path)
        assert main(["baseline", "--config", cfg, "--set", "no_equals_sign"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["baseline", "--config", str(tmp_path / "ghost.json")]) == 2

    def test_network_dataset_mismatch(self, tmp_path):
        cfg = blob_config(tmp_path, network={
            "input_shape": [12],
            "layers": [["dense", 12, 6], ["relu"], ["dense", 6, 3]],
            "classes": 3,
        })
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 2
        assert not out.exists()


class TestSweep:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = blob_config(tmp_path)
        one = tmp_path / "one"
        two = tmp_path / "two"
        assert main(["sweep", "--config", cfg, "--output", str(one)]) == 0
        assert main(["sweep", "--config", cfg, "--output", str(two)]) == 0
        surface = (one / "surface.csv").read_text().splitlines()
        assert surface[0] == "ratio,epsilon,acc_test_mean,acc_test_std,acc_adv_mean,acc_adv_std,reps"
        assert len(surface) == 3  # 2 ratios x 1 epsilon
        assert (one / "surface.csv").read_bytes() == (two / "surface.csv").read_bytes()
        assert (one / "sweep_grid.json").read_bytes() == (two / "sweep_grid.json").read_bytes()
        grid = json.loads((one / "sweep_grid.json").read_text())
        assert len(grid["cells"]) == 2
        assert grid["root_seed"] == 4400

    def test_env_worker_pool_matches_serial(self, tmp_path, monkeypatch):
        cfg = blob_config(tmp_path)
        serial = tmp_path / "serial"
        pooled = tmp_path / "pooled"
        assert main(["sweep", "--config", cfg, "--output", str(serial)]) == 0
        monkeypatch.setenv("ADVTUNE_WORKERS", "2")
        assert main(["sweep", "--config", cfg, "--output", str(pooled)]) == 0
        assert (serial / "surface.csv").read_bytes() == (pooled / "surface.csv").read_bytes()

    def test_invalid_worker_env_exits_2(self, tmp_path, monkeypatch):
        cfg = blob_config(tmp_path)
        monkeypatch.setenv("ADVTUNE_WORKERS", "many")
        assert main(["sweep", "--config", cfg, "--output", str(tmp_path / "out")]) == 2


class TestTune:
    def test_artifacts_and_exit_zero(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        assert main(["tune", "--config", cfg, "--output", str(out)]) == 0
        trials = [json.loads(l) for l in (out / "trials.jsonl").read_text().splitlines()]
        assert len(trials) == 6  # n=3 x repeats=2
        assert {t["rep"] for t in trials} == {0, 1}
        for t in trials:
            assert "duration" not in t
        timings = [json.loads(l) for l in (out / "timings.jsonl").read_text().splitlines()]
        assert len(timings) == 6
        assert all(t["duration"] >= 0 for t in timings)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["strategy"] == "random"
        assert summary["success_rate"] == 1.0
        assert len(summary["best_per_rep"]) == 2
        assert summary["rep_errors"] == [None, None]
        manifest = json.loads((out / "manifest.json").read_text())
        # the timing sidecar is nondeterministic and deliberately unhashed
        assert sorted(manifest["artifacts"]) == ["summary.json", "trials.jsonl"]

    def test_rerun_reproduces_deterministic_artifacts(self, tmp_path):
        cfg = blob_config(tmp_path)
        one = tmp_path / "one"
        two = tmp_path / "two"
        assert main(["tune", "--config", cfg, "--output", str(one)]) == 0
        assert main(["tune", "--config", cfg, "--output", str(two)]) == 0
        assert (one / "trials.jsonl").read_bytes() == (two / "trials.jsonl").read_bytes()
        assert (one / "summary.json").read_bytes() == (two / "summary.json").read_bytes()

    def test_grid_trials_replay_the_schedule(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        code = main([
            "tune", "--config", cfg, "--strategy", "grid", "--n", "4",
            "--repeats", "3", "--output", str(out),
        ])
        assert code == 0
        trials = [json.loads(l) for l in (out / "trials.jsonl").read_text().splitlines()]
        assert len(trials) == 4  # grid search never repeats
        space = a.SearchSpace(ratio_points=6, epsilon_points=6,
                              epsilon_min=0.05, epsilon_max=0.3)
        want = a.grid_schedule(space, 4)
        assert [(t["ratio"], t["epsilon"]) for t in trials] == want

    def test_infeasible_budget_exits_4(self, tmp_path, capsys):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        code = main([
            "tune", "--config", cfg, "--beta", "0", "--output", str(out),
        ])
        assert code == 4
        summary = json.loads((out / "summary.json").read_text())
        assert summary["success_rate"] == 0.0
        assert summary["best_per_rep"] == [None, None]
        assert "no feasible configuration" in capsys.readouterr().out

    def test_beta_unbounded_flag(self, tmp_path):
        cfg = blob_config(tmp_path)
        out = tmp_path / "out"
        code = main([
            "tune", "--config", cfg, "--beta", "unbounded", "--output", str(out),
        ])
        assert code == 0
        assert json.loads((out / "summary.json").read_text())["beta"] is None

    def test_beta_garbage_exits_2(self, tmp_path):
        cfg = blob_config(tmp_path)
        assert main(["tune", "--config", cfg, "--beta", "lots"]) == 2


class TestIdxDataset:
    def make_idx(self, tmp_path, gz=False):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(30, 4, 4), dtype=np.uint8)
        labels = np.tile(np.arange(10), 3).astype(np.uint8)
        ibytes = struct.pack(">IIII", 0x00000803, 30, 4, 4) + images.tobytes()
        lbytes = struct.pack(">II", 0x00000801, 30) + labels.tobytes()
        ipath = tmp_path / ("images.gz" if gz else "images.idx")
        lpath = tmp_path / "labels.idx"
        ipath.write_bytes(gzip.compress(ibytes) if gz else ibytes)
        lpath.write_bytes(lbytes)
        return str(ipath), str(lpath)

    def test_baseline_on_idx_files(self, tmp_path):
        images, labels = self.make_idx(tmp_path)
        cfg = blob_config(
            tmp_path,
            dataset={"kind": "idx", "images": images, "labels": labels},
            split={"validation_count": 5, "test_count": 5},
            network={
                "input_shape": [16],
                "layers": [["dense", 16, 10]],
                "classes": 10,
            },
            train={"ratio": 0.0, "epsilon": 0.05, "epochs": 1, "batch_size": 20,
                   "learning_rate": 0.1},
        )
        out = tmp_path / "out"
        assert main(["baseline", "--config", cfg, "--output", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["samples"] == {"train": 20, "validation": 5, "test": 5}

    def test_missing_idx_file_exits_2(self, tmp_path):
        cfg = blob_config(
            tmp_path,
            dataset={"kind": "idx", "images": str(tmp_path / "no.idx"),
                     "labels": str(tmp_path / "no2.idx")},
        )
        assert main(["baseline", "--config", cfg]) == 2
