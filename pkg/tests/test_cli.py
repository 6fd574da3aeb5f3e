"""End-to-end command-line tests; every invocation is in-process main(argv)."""

import filecmp
import json
import os

import pytest

from eventcap.cli import main
from eventcap.evaluation import read_predictions

SYNTH_ARGS = [
    "synth-data",
    "--videos", "6",
    "--val-fraction", "0.34",
    "--frames-min", "60",
    "--frames-max", "80",
    "--events-min", "2",
    "--events-max", "3",
    "--dim", "16",
    "--seed", "7",
]

TRAIN_SIZE_ARGS = [
    "--epochs", "1",
    "--batch-size", "3",
    "--d-model", "32",
    "--queries", "6",
    "--dec-layers", "2",
    "--frames", "40",
]


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("cli") / "data")
    assert main(SYNTH_ARGS + ["--out", d]) == 0
    return d


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    d = str(tmp_path_factory.mktemp("cli") / "run")
    assert main(["train", "--data", data_dir, "--out", d] + TRAIN_SIZE_ARGS) == 0
    return d


@pytest.fixture(scope="module")
def preds_path(run_dir, data_dir, tmp_path_factory):
    p = str(tmp_path_factory.mktemp("cli") / "preds.json")
    rc = main(
        ["infer", "--ckpt", os.path.join(run_dir, "last.ckpt"),
         "--data", data_dir, "--split", "val", "--out", p]
    )
    assert rc == 0
    return p


class TestSynthData:
    def test_layout(self, data_dir):
        for name in ("manifest.json", "train.json", "val.json", "lexicon.txt"):
            assert os.path.exists(os.path.join(data_dir, name)), name
        feats = os.listdir(os.path.join(data_dir, "features"))
        assert len(feats) == 6
        assert all(f.endswith(".evf") for f in feats)

    def test_byte_identical_across_runs(self, data_dir, tmp_path):
        other = str(tmp_path / "data2")
        assert main(SYNTH_ARGS + ["--out", other]) == 0
        assert tree_bytes(data_dir) == tree_bytes(other)

    def test_existing_dataset_needs_force(self, data_dir, capsys):
        assert main(SYNTH_ARGS + ["--out", data_dir]) == 3
        assert "error:" in capsys.readouterr().err

    def test_force_overwrites(self, tmp_path):
        d = str(tmp_path / "data3")
        assert main(SYNTH_ARGS + ["--out", d]) == 0
        assert main(SYNTH_ARGS + ["--out", d, "--force"]) == 0

    def test_bad_val_fraction_is_usage_error(self, tmp_path):
        rc = main(
            ["synth-data", "--out", str(tmp_path / "x"), "--videos", "4",
             "--val-fraction", "1.5"]
        )
        assert rc == 2


class TestTrain:
    def test_artifacts(self, run_dir):
        for name in ("config.ini", "last.ckpt", "best.ckpt", "history.json"):
            assert os.path.exists(os.path.join(run_dir, name)), name
        rows = json.loads(open(os.path.join(run_dir, "history.json")).read())
        assert len(rows) == 1 and rows[0]["epoch"] == 1

    def test_cli_overrides_beat_ini(self, data_dir, tmp_path, capsys):
        ini = tmp_path / "cfg.ini"
        ini.write_text("[train]\nepochs = 5\n")
        rc = main(
            ["train", "--data", data_dir, "--config", str(ini),
             "--out", str(tmp_path / "run")] + TRAIN_SIZE_ARGS
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "epochs = 1" in out
        assert "epochs = 5" not in out

    def test_invalid_toggle_is_usage_error(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["train", "--data", data_dir, "--out", str(tmp_path / "r"),
                  "--osl", "maybe"] + TRAIN_SIZE_ARGS)
        assert err.value.code == 2

    def test_missing_dataset_is_data_error(self, tmp_path, capsys):
        rc = main(["train", "--data", str(tmp_path / "nowhere"),
                   "--out", str(tmp_path / "r")] + TRAIN_SIZE_ARGS)
        assert rc == 3
        assert "manifest" in capsys.readouterr().err

    def test_resume_continues(self, run_dir, data_dir, tmp_path):
        out = str(tmp_path / "resumed")
        rc = main(
            ["train", "--data", data_dir, "--out", out,
             "--resume", os.path.join(run_dir, "last.ckpt")] + TRAIN_SIZE_ARGS
        )
        assert rc == 0
        rows = json.loads(open(os.path.join(out, "history.json")).read())
        assert rows[0]["epoch"] == 2


class TestInfer:
    def test_prediction_file(self, preds_path, data_dir):
        preds = read_predictions(preds_path)
        manifest = json.loads(open(os.path.join(data_dir, "manifest.json")).read())
        assert set(preds) == set(manifest["splits"]["val"])
        for events in preds.values():
            for start, end, caption, conf in events:
                assert 0.0 <= start <= end
                assert isinstance(caption, str)

    def test_topk_override(self, run_dir, data_dir, tmp_path):
        p = str(tmp_path / "topk.json")
        rc = main(
            ["infer", "--ckpt", os.path.join(run_dir, "last.ckpt"),
             "--data", data_dir, "--out", p, "--topk", "2"]
        )
        assert rc == 0
        assert all(len(v) == 2 for v in read_predictions(p).values())

    def test_missing_checkpoint_is_data_error(self, data_dir, tmp_path):
        rc = main(
            ["infer", "--ckpt", str(tmp_path / "no.ckpt"), "--data", data_dir,
             "--out", str(tmp_path / "p.json")]
        )
        assert rc == 3


class TestEval:
    def test_report_and_outputs(self, preds_path, data_dir, tmp_path, capsys):
        out = str(tmp_path / "report.json")
        rc = main(
            ["eval", "--preds", preds_path,
             "--gt", os.path.join(data_dir, "val.json"), "--out", out]
        )
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-2] == "precision,recall,f1,bleu4,cider,soda_c,meteor"
        assert len(lines[-1].split(",")) == 7
        doc = json.loads("\n".join(lines[:-2]))
        assert set(doc["per_threshold"]) == {"0.3", "0.5", "0.7", "0.9"}
        assert doc == json.loads(open(out).read())

    def test_custom_thresholds(self, preds_path, data_dir, capsys):
        rc = main(
            ["eval", "--preds", preds_path,
             "--gt", os.path.join(data_dir, "val.json"), "--thresholds", "0.5,0.75"]
        )
        assert rc == 0
        doc = json.loads(
            "\n".join(capsys.readouterr().out.strip().splitlines()[:-2])
        )
        assert set(doc["per_threshold"]) == {"0.5", "0.75"}

    def test_missing_predictions_is_data_error(self, data_dir, tmp_path, capsys):
        rc = main(
            ["eval", "--preds", str(tmp_path / "no.json"),
             "--gt", os.path.join(data_dir, "val.json")]
        )
        assert rc == 3
        assert "error:" in capsys.readouterr().err

    def test_bad_threshold_string_is_usage_error(self, preds_path, data_dir, capsys):
        rc = main(
            ["eval", "--preds", preds_path,
             "--gt", os.path.join(data_dir, "val.json"), "--thresholds", "a,b"]
        )
        assert rc == 2
        assert "thresholds" in capsys.readouterr().err


class TestGradcheck:
    def test_both_losses_pass(self, capsys):
        assert main(["gradcheck", "--configs", "3"]) == 0
        out = capsys.readouterr().out
        assert "osl: PASS" in out and "ctca: PASS" in out

    def test_single_loss(self, capsys):
        assert main(["gradcheck", "--loss", "osl", "--configs", "2"]) == 0
        out = capsys.readouterr().out
        assert "osl: PASS" in out and "ctca" not in out


class TestInspect:
    def test_dump_contents(self, run_dir, data_dir, tmp_path):
        out = str(tmp_path / "attn.tsv")
        rc = main(
            ["inspect", "--ckpt", os.path.join(run_dir, "last.ckpt"),
             "--data", data_dir, "--out", out]
        )
        assert rc == 0
        lines = open(out).read().splitlines()
        assert lines[0].startswith("# video\tlayer\trole")
        roles = {line.split("\t")[2] for line in lines[1:-1]}
        assert roles == {"loc", "cap"}
        assert lines[-1].startswith("# overlap_stats ")
        stats = json.loads(lines[-1].split(" ", 2)[2])
        assert {"mean_pairwise_tiou", "high_overlap_pairs", "n_pairs"} <= set(stats)

    def test_unknown_video_is_data_error(self, run_dir, data_dir, tmp_path, capsys):
        rc = main(
            ["inspect", "--ckpt", os.path.join(run_dir, "last.ckpt"),
             "--data", data_dir, "--video", "nope", "--out", str(tmp_path / "a.tsv")]
        )
        assert rc == 3
        assert "nope" in capsys.readouterr().err


class TestParser:
    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["explode"])
        assert err.value.code == 2
