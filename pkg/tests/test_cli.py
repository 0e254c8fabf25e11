"""End-to-end tests of the command-line interface."""

import json

import pytest

from mgfc.cli import main

TINY_MODEL = [
    "--audio-timestep", "6", "--audio-stride", "2", "--audio-layers", "1", "--audio-hidden", "4",
    "--text-timestep", "6", "--text-stride", "2", "--text-layers", "1", "--text-hidden", "3",
    "--highway", "2",
]
TINY_TRAIN = ["--lr", "0.002", "--batch-size", "16", "--max-epochs", "3", "--patience", "3"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    code = main(["synth", "--seed", "5", "--sessions", "6", "--separation", "1.0",
                 "--out", str(root)])
    assert code == 0
    return root


def run(args):
    return main([str(a) for a in args])


class TestSynthCommand:
    def test_writes_dataset_and_config(self, tmp_path):
        out = tmp_path / "ds"
        assert run(["synth", "--seed", "1", "--sessions", "4", "--out", out]) == 0
        assert (out / "manifest.csv").is_file()
        assert (out / "embeddings.txt").is_file()
        assert (out / "frames" / "s0001.csv").is_file()
        assert (out / "asr" / "s0001.json").is_file()
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["seed"] == 1 and cfg["sessions"] == 4
        assert cfg["lr"] == 1e-4  # defaults are captured too

    def test_odd_sessions_fails_cleanly(self, tmp_path, capsys):
        assert run(["synth", "--seed", "1", "--sessions", "5", "--out", tmp_path / "x"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_out_fails(self):
        assert run(["synth", "--seed", "1", "--sessions", "4"]) == 1


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["cv", "--bogus-flag", "1"])
        assert exc.value.code == 2

    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_manifest_exits_1(self, tmp_path, capsys):
        code = run(["cv", "--embeddings", "none.txt", "--out", tmp_path / "o"])
        assert code == 1
        assert "manifest" in capsys.readouterr().err

    def test_nonexistent_manifest_named(self, dataset, tmp_path, capsys):
        code = run(["cv", "--manifest", "missing.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", tmp_path / "o"])
        assert code == 1
        assert "missing.csv" in capsys.readouterr().err


class TestExtract:
    def test_writes_dumps(self, dataset, tmp_path):
        out = tmp_path / "ex"
        code = run(["extract", "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out])
        assert code == 0
        acoustic = sorted((out / "features").glob("*.acoustic.csv"))
        lexical = sorted((out / "features").glob("*.lexical.csv"))
        assert len(acoustic) == 6 and len(lexical) == 6
        header = acoustic[0].read_text().splitlines()[0]
        assert "a00:mean" in header


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    code = run(["train", "--task", "ad", "--model", "fused", "--seed", "3",
                "--manifest", dataset / "manifest.csv",
                "--embeddings", dataset / "embeddings.txt", "--out", out,
                *TINY_MODEL, *TINY_TRAIN])
    assert code == 0
    return out


class TestTrainEvalPredict:
    def test_train_outputs(self, trained):
        assert (trained / "checkpoint.mgfc").is_file()
        log = (trained / "training_log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_loss,val_loss"
        assert len(log) >= 2
        cfg = json.loads((trained / "config.json").read_text())
        assert cfg["model"] == "fused" and cfg["audio_hidden"] == 4

    def test_eval_writes_report(self, dataset, trained, tmp_path):
        out = tmp_path / "ev"
        code = run(["eval", "--checkpoint", trained / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["protocol"] == "test"
        assert report["metrics"]["accuracy"] is not None

    def test_predict_writes_csv(self, dataset, trained, tmp_path):
        out = tmp_path / "pr"
        code = run(["predict", "--checkpoint", trained / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out])
        assert code == 0
        lines = (out / "predictions.csv").read_text().splitlines()
        assert lines[0] == "session_id,score,label"
        assert len(lines) == 7
        sid, score, label = lines[1].split(",")
        assert sid == "s0001" and 0.0 <= float(score) <= 1.0 and label in ("0", "1")

    def test_flag_mismatch_names_flag(self, dataset, trained, tmp_path, capsys):
        code = run(["predict", "--checkpoint", trained / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt",
                    "--no-pause", "--out", tmp_path / "p2"])
        assert code == 1
        err = capsys.readouterr().err
        assert "pause" in err and "mismatch" in err

    def test_task_mismatch_detected(self, dataset, trained, tmp_path, capsys):
        code = run(["eval", "--checkpoint", trained / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt",
                    "--task", "mmse", "--out", tmp_path / "e2"])
        assert code == 1
        assert "task" in capsys.readouterr().err

    def test_wrong_embeddings_rejected(self, dataset, trained, tmp_path, capsys):
        other = tmp_path / "other.txt"
        other.write_text("the 0.1 0.2 0.3\n")
        code = run(["predict", "--checkpoint", trained / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", other, "--out", tmp_path / "p3"])
        assert code == 1
        assert "embedding" in capsys.readouterr().err

    def test_train_late_writes_two_logs(self, dataset, tmp_path):
        out = tmp_path / "late"
        code = run(["train", "--task", "ad", "--model", "late", "--seed", "3",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out,
                    *TINY_MODEL, *TINY_TRAIN])
        assert code == 0
        assert (out / "training_log_audio.csv").is_file()
        assert (out / "training_log_text.csv").is_file()
        out2 = tmp_path / "late_eval"
        code = run(["eval", "--checkpoint", out / "checkpoint.mgfc",
                    "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out2])
        assert code == 0


class TestCv:
    def test_cv_report_and_config_rerun(self, dataset, tmp_path):
        out1 = tmp_path / "cv1"
        args = ["cv", "--task", "ad", "--model", "fused", "--seed", "7", "--folds", "3",
                "--manifest", dataset / "manifest.csv",
                "--embeddings", dataset / "embeddings.txt", "--out", out1,
                *TINY_MODEL, *TINY_TRAIN]
        assert run(args) == 0
        report1 = (out1 / "report.json").read_bytes()
        doc = json.loads(report1)
        assert doc["protocol"] == "3-fold"
        assert len(doc["folds"]) == 3

        # re-running from the emitted resolved config reproduces the report
        out2 = tmp_path / "cv2"
        assert run(["cv", "--config", out1 / "config.json", "--out", out2]) == 0
        assert (out2 / "report.json").read_bytes() == report1

    def test_same_argv_is_deterministic(self, dataset, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            args = ["cv", "--task", "decline", "--model", "text", "--seed", "2",
                    "--folds", "3", "--manifest", dataset / "manifest.csv",
                    "--embeddings", dataset / "embeddings.txt", "--out", out,
                    *TINY_MODEL, *TINY_TRAIN]
            assert run(args) == 0
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_loso(self, dataset, tmp_path):
        out = tmp_path / "loso"
        args = ["cv", "--task", "decline", "--model", "text", "--seed", "2", "--loso",
                "--manifest", dataset / "manifest.csv",
                "--embeddings", dataset / "embeddings.txt", "--out", out,
                *TINY_MODEL, *TINY_TRAIN]
        assert run(args) == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["protocol"] == "loso"
        assert len(doc["folds"]) == 6
