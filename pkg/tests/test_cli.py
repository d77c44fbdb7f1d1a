import json

import numpy as np
import pytest
from PIL import Image

from effisegnet.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_FAILURE,
    EXIT_OK,
    format_millions,
    main,
)


@pytest.fixture(scope="module")
def split_file(blob_root_224, tmp_path_factory):
    ids = sorted(p.stem for p in (blob_root_224 / "images").iterdir())
    payload = {"train": ids[:3], "validation": ids[3:5], "test": ids[5:7]}
    path = tmp_path_factory.mktemp("split") / "split.json"
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def trained_run(blob_root_224, split_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(
        [
            "train",
            "--data-root", str(blob_root_224),
            "--split", str(split_file),
            "--out", str(out),
            "--variant", "b0",
            "--epochs", "1",
            "--batch-size", "2",
            "--seed", "3",
            "--no-pretrained",
            "--no-augment",
            "--device", "cpu",
        ]
    )
    assert code == EXIT_OK
    return out


class TestTrain:
    def test_run_artifacts(self, trained_run):
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert "completed_at" in manifest
        assert manifest["config"]["variant"] == "b0"
        assert manifest["config"]["epochs"] == 1
        assert "dataset_fingerprint" in manifest
        assert (trained_run / "split.json").exists()
        history = (trained_run / "history.csv").read_text().strip().splitlines()
        assert history[0] == "epoch,lr,train_loss,val_loss,val_mdice"
        assert len(history) == 2
        assert (trained_run / "checkpoints" / "best.pt").exists()
        assert (trained_run / "checkpoints" / "best.json").exists()
        assert (trained_run / "checkpoints" / "last.pt").exists()

    def test_crashed_run_still_leaves_manifest(self, tmp_path):
        out = tmp_path / "crash"
        code = main(
            [
                "train",
                "--data-root", str(tmp_path / "missing"),
                "--split", "generate:0",
                "--out", str(out),
                "--variant", "b0",
                "--epochs", "1",
                "--no-pretrained",
            ]
        )
        assert code == EXIT_DATA
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert "completed_at" not in manifest

    def test_unknown_config_key_names_it(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"variant": "b0", "warmup_epochs": 5}))
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        assert "warmup_epochs" in capsys.readouterr().err

    def test_unknown_augmentation_key_names_it(self, blob_root_224, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "variant": "b0",
                    "pretrained": False,
                    "epochs": 1,
                    "data_root": str(blob_root_224),
                    "split": "generate:0",
                    "out": str(tmp_path / "o"),
                    "augmentation": {"mosaic": True},
                }
            )
        )
        code = main(["train", "--config", str(cfg)])
        assert code == EXIT_CONFIG
        assert "mosaic" in capsys.readouterr().err

    def test_flags_override_config_file(self, blob_root_224, split_file, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "variant": "b0",
                    "pretrained": False,
                    "augment": False,
                    "epochs": 7,
                    "batch_size": 2,
                    "seed": 3,
                    "data_root": str(blob_root_224),
                    "split": str(split_file),
                    "out": str(tmp_path / "ignored"),
                }
            )
        )
        out = tmp_path / "override"
        code = main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(out)])
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 1

    def test_bad_schedule_is_config_error(self, blob_root_224, tmp_path):
        code = main(
            [
                "train",
                "--data-root", str(blob_root_224),
                "--split", "generate:0",
                "--out", str(tmp_path / "o"),
                "--variant", "b0",
                "--lr-initial", "1e-6",
                "--lr-final", "1e-4",
                "--no-pretrained",
            ]
        )
        assert code == EXIT_CONFIG

    def test_missing_required_setting(self, tmp_path):
        code = main(["train", "--variant", "b0", "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG


class TestEvaluate:
    def test_reports_written(self, trained_run, blob_root_224, split_file, tmp_path):
        out = tmp_path / "eval"
        code = main(
            [
                "evaluate",
                "--checkpoint", str(trained_run / "checkpoints" / "best.pt"),
                "--data-root", str(blob_root_224),
                "--split", str(split_file),
                "--out", str(out),
            ]
        )
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["model"] == "effisegnet-b0"
        assert report["n_images"] == 2
        csv_lines = (out / "report.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "model,f1,mdice,miou,precision,recall"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "evaluate"
        assert "completed_at" in manifest

    def test_variant_crosscheck_refuses(self, trained_run, blob_root_224, split_file, tmp_path):
        code = main(
            [
                "evaluate",
                "--checkpoint", str(trained_run / "checkpoints" / "best.pt"),
                "--data-root", str(blob_root_224),
                "--split", str(split_file),
                "--out", str(tmp_path / "e2"),
                "--variant", "b4",
            ]
        )
        assert code == EXIT_FAILURE

    def test_corrupt_checkpoint_fails_cleanly(self, trained_run, blob_root_224, split_file, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"garbage")
        (tmp_path / "bad.json").write_text("{}")
        code = main(
            [
                "evaluate",
                "--checkpoint", str(bad),
                "--data-root", str(blob_root_224),
                "--split", str(split_file),
                "--out", str(tmp_path / "e3"),
            ]
        )
        assert code == EXIT_FAILURE


class TestPredict:
    def test_masks_written_at_original_size(self, trained_run, blob_root_224, tmp_path):
        image = next(iter(sorted((blob_root_224 / "images").iterdir())))
        out = tmp_path / "pred"
        code = main(
            [
                "predict",
                str(image),
                "--checkpoint", str(trained_run / "checkpoints" / "best.pt"),
                "--out", str(out),
                "--probs",
            ]
        )
        assert code == EXIT_OK
        mask_path = out / f"{image.stem}_mask.png"
        assert mask_path.exists()
        mask = np.asarray(Image.open(mask_path))
        assert mask.shape == (224, 224)  # source images are 224px
        assert set(np.unique(mask)).issubset({0, 255})
        probs = np.load(out / f"{image.stem}_probs.npy")
        assert probs.shape == (224, 224)
        assert probs.min() >= 0.0 and probs.max() <= 1.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "predict"
        assert "completed_at" in manifest


class TestParams:
    def test_table_contents(self, capsys):
        code = main(["params", "b0"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert "variant" in lines[0]
        row = lines[1].split()
        assert row[0] == "b0"
        assert row[1] == "4.0M"
        assert "(4007548)" in lines[1]
        assert "(158369)" in lines[1]

    def test_all_variants_listed(self, capsys):
        code = main(["params", "all"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        for name in ("b0", "b4", "b7"):
            assert f"\n{name} " in out

    def test_unknown_variant(self, capsys):
        assert main(["params", "b9"]) == EXIT_CONFIG

    def test_format_millions(self):
        assert format_millions(4007548) == "4.0M"
        assert format_millions(158369) == "0.16M"
        assert format_millions(63786960) == "63.8M"
