import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from irisauth.cli import dispatch
from irisauth import datagen


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = dispatch(["gen-data", "--ids", "3", "--per-id", "4", "--size", "32",
                     "--seed", "5", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def extracted(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("extracted")
    code = dispatch(["extract", "--data", str(small_dataset / "manifest.json"),
                     "--use-gt", "--square", "32", "--classifier-input", "16",
                     "--out", str(out)])
    assert code == 0
    return out


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert dispatch(["--bogus"]) == 2
        assert "usage" in capsys.readouterr().err.lower()

    def test_no_subcommand(self):
        assert dispatch([]) == 2

    def test_unknown_flag(self):
        assert dispatch(["gen-data", "--nonsense", "--out", "x"]) == 2

    def test_missing_data_file(self, tmp_path, capsys):
        code = dispatch(["train-detector", "--data",
                         str(tmp_path / "ghost.json"), "--out", str(tmp_path)])
        assert code == 1
        assert "error" in capsys.readouterr().err.lower()


class TestGenData:
    def test_manifest_written(self, small_dataset):
        manifest = datagen.load_manifest(small_dataset / "manifest.json")
        assert len(manifest.samples) == 12
        assert (small_dataset / "run_manifest.json").exists()

    def test_deterministic_rerun(self, tmp_path):
        args = ["gen-data", "--ids", "2", "--per-id", "2", "--size", "32",
                "--seed", "9"]
        assert dispatch(args + ["--out", str(tmp_path / "a")]) == 0
        assert dispatch(args + ["--out", str(tmp_path / "b")]) == 0
        for rel in ("manifest.json", "images/id000_img000.png"):
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()

    def test_rerun_from_run_manifest(self, tmp_path):
        assert dispatch(["gen-data", "--ids", "2", "--per-id", "3",
                         "--size", "32", "--seed", "4",
                         "--out", str(tmp_path / "a")]) == 0
        assert dispatch(["gen-data",
                         "--config", str(tmp_path / "a" / "run_manifest.json"),
                         "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ids": 2, "per_id": 3, "size": 32, "seed": 1}))
        out = tmp_path / "out"
        assert dispatch(["gen-data", "--config", str(cfg), "--ids", "4",
                         "--out", str(out)]) == 0
        manifest = datagen.load_manifest(out / "manifest.json")
        assert len(manifest.samples) == 4 * 3  # flag ids=4 beats file ids=2
        run = json.loads((out / "run_manifest.json").read_text())
        assert run["config"]["ids"] == 4
        assert run["config"]["per_id"] == 3


class TestExtract:
    def test_outputs(self, extracted):
        X, y, info = datagen.load_extracted(extracted / "extracted.json")
        assert X.shape == (12, 3, 16, 16)
        assert info["square_size"] == 32
        assert (extracted / "run_manifest.json").exists()

    def test_needs_detector_or_gt(self, small_dataset, tmp_path, capsys):
        code = dispatch(["extract", "--data",
                         str(small_dataset / "manifest.json"),
                         "--out", str(tmp_path)])
        assert code == 1
        assert "detector" in capsys.readouterr().err


class TestTrainAndCrossval:
    def test_train_detector_smoke(self, small_dataset, tmp_path):
        out = tmp_path / "det"
        code = dispatch(["train-detector", "--data",
                         str(small_dataset / "manifest.json"),
                         "--epochs", "2", "--batch", "4", "--split", "0.5",
                         "--out", str(out)])
        assert code == 0
        assert (out / "detector.ckpt").exists()
        trace = (out / "loss_trace.csv").read_text().strip().splitlines()
        assert trace[0] == "epoch,l_cls,l_box,l_mask,total"
        assert len(trace) == 3

    def test_extract_with_detector_checkpoint(self, small_dataset, tmp_path):
        det_out = tmp_path / "det"
        assert dispatch(["train-detector", "--data",
                         str(small_dataset / "manifest.json"),
                         "--epochs", "2", "--batch", "4", "--split", "0.5",
                         "--out", str(det_out)]) == 0
        ex_out = tmp_path / "ex"
        code = dispatch(["extract", "--data",
                         str(small_dataset / "manifest.json"),
                         "--detector", str(det_out / "detector.ckpt"),
                         "--square", "32", "--out", str(ex_out)])
        assert code == 0
        assert (ex_out / "extracted.json").exists()

    def test_train_classifier_smoke(self, extracted, tmp_path):
        out = tmp_path / "clf"
        code = dispatch(["train-classifier", "--data",
                         str(extracted / "extracted.json"),
                         "--epochs", "2", "--batch", "4", "--widths", "4",
                         "--val-fraction", "0.25", "--out", str(out)])
        assert code == 0
        assert (out / "classifier.ckpt").exists()

    def test_crossval_outputs_and_determinism(self, extracted, tmp_path):
        args = ["crossval", "--data", str(extracted / "extracted.json"),
                "--k", "2", "--epochs", "2", "--batch", "4",
                "--widths", "4", "--seed", "3"]
        out_a = tmp_path / "cv_a"
        out_b = tmp_path / "cv_b"
        assert dispatch(args + ["--out", str(out_a)]) == 0
        assert dispatch(args + ["--out", str(out_b)]) == 0
        metrics_a = (out_a / "metrics.csv").read_bytes()
        assert metrics_a == (out_b / "metrics.csv").read_bytes()
        lines = metrics_a.decode().strip().splitlines()
        assert len(lines) == 1 + 2 * 2 * 2  # header + k*epochs*splits
        summary = json.loads((out_a / "summary.json").read_text())
        assert len(summary["sessions"]) == 1
        assert len(summary["sessions"][0]["per_fold_benchmark"]) == 2
        assert (out_a / "curves.svg").exists()

    def test_rerun_from_run_manifest(self, extracted, tmp_path):
        out_a = tmp_path / "first"
        assert dispatch(["crossval", "--data",
                         str(extracted / "extracted.json"),
                         "--k", "2", "--epochs", "1", "--batch", "4",
                         "--widths", "4", "--out", str(out_a)]) == 0
        out_b = tmp_path / "second"
        assert dispatch(["crossval", "--data",
                         str(extracted / "extracted.json"),
                         "--config", str(out_a / "run_manifest.json"),
                         "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == \
            (out_b / "metrics.csv").read_bytes()

    def test_resume_checkpoints_written(self, small_dataset, extracted, tmp_path):
        from irisauth.checkpoint import load_checkpoint
        from irisauth.optim import OptState

        det_out = tmp_path / "det"
        assert dispatch(["train-detector", "--data",
                         str(small_dataset / "manifest.json"),
                         "--epochs", "1", "--batch", "4", "--split", "0.5",
                         "--out", str(det_out)]) == 0
        meta, tensors = load_checkpoint(det_out / "detector_resume.ckpt")
        assert meta["kind"] == "resume" and meta["t"] > 0
        state = OptState.from_arrays(tensors, t=meta["t"])
        assert state.m and state.v and state.v_hat
        assert "backbone.0.w" in tensors  # final-epoch weights ride along

        clf_out = tmp_path / "clf"
        assert dispatch(["train-classifier", "--data",
                         str(extracted / "extracted.json"),
                         "--epochs", "1", "--batch", "4", "--widths", "4",
                         "--out", str(clf_out)]) == 0
        meta, _ = load_checkpoint(clf_out / "classifier_resume.ckpt")
        assert meta["kind"] == "resume"

    def test_nir_session_flow(self, tmp_path):
        data = tmp_path / "nir_data"
        assert dispatch(["gen-data", "--ids", "2", "--per-id", "4",
                         "--size", "32", "--spectrum", "NIR", "--seed", "2",
                         "--out", str(data)]) == 0
        ex = tmp_path / "nir_ex"
        assert dispatch(["extract", "--data", str(data / "manifest.json"),
                         "--use-gt", "--square", "32",
                         "--classifier-input", "16", "--out", str(ex)]) == 0
        cv = tmp_path / "nir_cv"
        assert dispatch(["crossval", "--data", str(ex / "extracted.json"),
                         "--session", "NIR", "--k", "2", "--epochs", "1",
                         "--batch", "4", "--widths", "4",
                         "--out", str(cv)]) == 0
        summary = json.loads((cv / "summary.json").read_text())
        assert summary["sessions"][0]["session"] == "NIR"

    def test_detector_training_deterministic(self, small_dataset, tmp_path):
        args = ["train-detector", "--data",
                str(small_dataset / "manifest.json"),
                "--epochs", "1", "--batch", "4", "--split", "0.5"]
        assert dispatch(args + ["--out", str(tmp_path / "a")]) == 0
        assert dispatch(args + ["--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "detector.ckpt").read_bytes() == \
            (tmp_path / "b" / "detector.ckpt").read_bytes()


class TestReport:
    def test_csv_to_svg(self, tmp_path):
        csv = tmp_path / "metrics.csv"
        lines = ["fold,epoch,split,accuracy,loss"]
        for fold in range(2):
            for epoch in range(3):
                lines.append(f"{fold},{epoch},train,{50 + epoch}.000000,1.000000")
                lines.append(f"{fold},{epoch},val,{52 + epoch}.000000,0.900000")
        csv.write_text("\n".join(lines) + "\n")
        svg = tmp_path / "curves.svg"
        assert dispatch(["report", "--metrics", str(csv), "--out", str(svg)]) == 0
        root = ET.parse(svg).getroot()
        polylines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
        assert len(polylines) == 4  # 2 folds x (accuracy + loss)


class TestGradcheckCommand:
    def test_single_seed_passes(self, capsys):
        assert dispatch(["gradcheck", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        assert "all" in out and "passed" in out


class TestOutputRootEnv:
    def test_relative_out_uses_env_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IRISAUTH_OUT", str(tmp_path))
        assert dispatch(["gen-data", "--ids", "2", "--per-id", "2",
                         "--size", "32", "--out", "nested/run"]) == 0
        assert (tmp_path / "nested" / "run" / "manifest.json").exists()
