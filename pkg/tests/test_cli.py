"""CLI contract tests: command wiring, schemas, exit codes, determinism."""

import json

import numpy as np
import pytest

from conftest import simulate_scan

from fus3d.cli import main
from fus3d.compound import read_volume
from fus3d.pose import read_pose_csv
from fus3d.simulate import TrajectorySpec, read_scan, write_scan


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scan_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_scan")
    code = run(
        "simulate", "--out", root / "scan", "--shape", "s_curve",
        "--frames", 24, "--length-mm", 3.5, "--lateral-amplitude", 0.4,
        "--noise-translation", 0.02, 0.02, 0.01, "--seed", 11,
        "--subject", "s42",
    )
    assert code == 0
    return root / "scan"


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_dataset")
    for k in range(3):
        spec = TrajectorySpec(
            shape="linear", length_mm=0.16 * 13, n_frames=14,
            noise_translation_mm=(0.02, 0.02, 0.01), seed=300 + k,
        )
        scan = simulate_scan(spec, phantom_seed=400 + k, subject=f"s{k:02d}")
        write_scan(root / f"scan{k:02d}", scan)
    return root


class TestSimulate:
    def test_frame_count_contract(self, scan_dir):
        scan = read_scan(scan_dir)
        assert scan.n_frames == 24
        assert scan.subject == "s42"
        assert (scan_dir / "manifest.json").exists()

    def test_rerun_same_seed_byte_identical(self, tmp_path):
        args = ["simulate", "--shape", "linear", "--frames", 10,
                "--length-mm", 1.5, "--seed", 3]
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "frames.bin").read_bytes() == (
            tmp_path / "b" / "frames.bin"
        ).read_bytes()
        assert (tmp_path / "a" / "poses.csv").read_bytes() == (
            tmp_path / "b" / "poses.csv"
        ).read_bytes()

    def test_single_frame_is_config_error(self, tmp_path):
        assert run("simulate", "--out", tmp_path / "x", "--frames", 1) == 2

    def test_overwrite_requires_force(self, tmp_path):
        args = ["simulate", "--out", tmp_path / "x", "--frames", 8,
                "--length-mm", 1.0, "--seed", 1]
        assert run(*args) == 0
        assert run(*args) == 2
        assert run(*args, "--force") == 0


class TestInfer:
    def test_identity_debug_round_trip(self, scan_dir, tmp_path):
        code = run("infer", "--scan", scan_dir, "--identity-debug",
                   "--out", tmp_path / "pred")
        assert code == 0
        truth = read_pose_csv(scan_dir / "poses.csv")
        rel = read_pose_csv(tmp_path / "pred" / "pred_relative.csv")
        absolute = read_pose_csv(tmp_path / "pred" / "pred_absolute.csv")
        assert len(rel) == len(truth) - 1
        assert len(absolute) == len(truth)
        worst = max(
            np.abs(a.as_array() - b.as_array()).max()
            for a, b in zip(absolute, truth)
        )
        assert worst < 1e-9

    def test_requires_exactly_one_source(self, scan_dir, tmp_path):
        assert run("infer", "--scan", scan_dir, "--out", tmp_path / "x") == 2
        assert run("infer", "--scan", scan_dir, "--identity-debug",
                   "--baseline", "nope.csv", "--out", tmp_path / "y") == 2

    def test_baseline_path(self, scan_dir, dataset_dir, tmp_path):
        cal_scan = sorted(dataset_dir.iterdir())[0]
        assert run("calibrate-baseline", "--scan", cal_scan,
                   "--out", tmp_path / "cal", "--lags", 1, 2, 3, 4) == 0
        code = run("infer", "--scan", scan_dir,
                   "--baseline", tmp_path / "cal" / "calibration.csv",
                   "--out", tmp_path / "pred")
        assert code == 0
        rel = read_pose_csv(tmp_path / "pred" / "pred_relative.csv")
        assert len(rel) == 23
        assert all(p.rx == 0.0 and p.ry == 0.0 and p.rz == 0.0 for p in rel)


class TestEvaluate:
    def test_truth_vs_itself_is_zero(self, scan_dir, tmp_path, capsys):
        code = run("evaluate", "--truth", scan_dir / "poses.csv",
                   "--pred", scan_dir / "poses.csv", "--scan", scan_dir,
                   "--out", tmp_path / "eval")
        assert code == 0
        payload = json.loads((tmp_path / "eval" / "report.json").read_text())
        assert set(payload) == {"rAE", "aAE", "rFE", "aFE", "corr", "fd", "fdr"}
        assert payload["rAE"] == 0.0
        assert payload["fd"] == 0.0
        assert payload["corr"] == 1.0
        printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert printed == payload

    def test_matches_metrics_module(self, scan_dir, tmp_path):
        from fus3d.metrics import evaluate_trajectories
        from fus3d.pose import pose_to_transform

        # perturb the trajectory deterministically
        truth = read_pose_csv(scan_dir / "poses.csv")
        rng = np.random.default_rng(5)
        noisy = [
            type(p).from_array(p.as_array() + rng.normal(0, 0.05, 6))
            for p in truth
        ]
        noisy[0] = type(truth[0]).from_array(np.zeros(6))
        from fus3d.pose import write_pose_csv

        write_pose_csv(tmp_path / "noisy.csv", noisy)
        code = run("evaluate", "--truth", scan_dir / "poses.csv",
                   "--pred", tmp_path / "noisy.csv", "--scan", scan_dir,
                   "--out", tmp_path / "eval")
        assert code == 0
        payload = json.loads((tmp_path / "eval" / "report.json").read_text())
        scan = read_scan(scan_dir)
        expected, _ = evaluate_trajectories(
            [pose_to_transform(p) for p in truth],
            [pose_to_transform(p) for p in noisy],
            scan.geometry,
        )
        for key, value in expected.as_json_dict().items():
            assert payload[key] == pytest.approx(value, abs=1e-12)

    def test_csv_row(self, scan_dir, tmp_path):
        run("evaluate", "--truth", scan_dir / "poses.csv",
            "--pred", scan_dir / "poses.csv", "--scan", scan_dir,
            "--out", tmp_path / "eval")
        lines = (tmp_path / "eval" / "report.csv").read_text().splitlines()
        assert lines[0] == "rAE,aAE,rFE,aFE,corr,fd,fdr"
        assert len(lines[1].split(",")) == 7


class TestCompound:
    def test_volume_with_provenance(self, scan_dir, tmp_path):
        code = run("compound", "--scan", scan_dir,
                   "--poses", scan_dir / "poses.csv", "--voxel", 0.1484,
                   "--source", "truth", "--out", tmp_path / "vol")
        assert code == 0
        intensity, origin, voxel, sidecar = read_volume(
            tmp_path / "vol" / "volume.fvl"
        )
        assert intensity.ndim == 3
        assert voxel == pytest.approx(0.1484)
        assert sidecar["source"] == "truth"
        assert sidecar["scan"] == str(scan_dir)

    def test_pose_count_mismatch_is_usage_error(self, scan_dir, dataset_dir,
                                                tmp_path):
        other = sorted(dataset_dir.iterdir())[0] / "poses.csv"
        assert run("compound", "--scan", scan_dir, "--poses", other,
                   "--voxel", 0.1, "--out", tmp_path / "vol") == 2


class TestTrainCommand:
    def test_short_training_run(self, dataset_dir, tmp_path):
        code = run("train", "--dataset", dataset_dir, "--out", tmp_path / "run",
                   "--steps", 2, "--seq-len", 3, "--batch", 2,
                   "--val-fraction", 0.34, "--val-every", 1, "--seed", 1)
        assert code == 0
        out = tmp_path / "run"
        assert (out / "checkpoint.ckpt").exists()
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0] == "step,mmae,corr,triplet,total,lr"
        assert len(log) == 3
        report = json.loads((out / "val_report.json").read_text())
        assert "mean" in report and "per_scan" in report
        assert set(report["mean"]) == {"rAE", "aAE", "rFE", "aFE", "corr",
                                       "fd", "fdr"}

    def test_checkpoint_infer_round_trip(self, dataset_dir, tmp_path):
        run("train", "--dataset", dataset_dir, "--out", tmp_path / "run",
            "--steps", 1, "--seq-len", 3, "--batch", 2,
            "--val-fraction", 0.34, "--seed", 1)
        scan = sorted(dataset_dir.iterdir())[0]
        code = run("infer", "--scan", scan,
                   "--checkpoint", tmp_path / "run" / "checkpoint.ckpt",
                   "--out", tmp_path / "pred")
        assert code == 0
        rel = read_pose_csv(tmp_path / "pred" / "pred_relative.csv")
        assert len(rel) == 13

    def test_too_small_dataset_is_usage_error(self, tmp_path, dataset_dir):
        single = tmp_path / "single"
        single.mkdir()
        import shutil

        shutil.copytree(sorted(dataset_dir.iterdir())[0], single / "scan00")
        assert run("train", "--dataset", single, "--out", tmp_path / "run",
                   "--steps", 1) == 2


class TestConfigFile:
    def test_defaults_from_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frames=9\nlength-mm=1.2\nshape=linear\nseed=5\n")
        code = run("simulate", "--config", cfg, "--out", tmp_path / "scan")
        assert code == 0
        assert read_scan(tmp_path / "scan").n_frames == 9

    def test_cli_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frames=9\nlength-mm=1.2\n")
        run("simulate", "--config", cfg, "--frames", 7,
            "--out", tmp_path / "scan")
        assert read_scan(tmp_path / "scan").n_frames == 7

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("frames=9\nbogus_key=1\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path / "scan") == 2


class TestManifest:
    def test_manifest_captures_config_and_seed(self, scan_dir):
        manifest = json.loads((scan_dir / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["arguments"]["seed"] == 11
        assert manifest["arguments"]["frames"] == 24
