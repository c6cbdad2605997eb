"""CLI: flag surface, config files, outputs, exit codes."""

import json

import numpy as np
import pytest

from gumbelmask.checkpoint import load_checkpoint
from gumbelmask.cli import ABLATION_HEADER, build_parser, main, parse_config_file


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def quick_flags(tmp_path):
    return [
        "--dataset", "synthetic", "--arch", "mlp", "--max-epochs", "3",
        "--patience", "3", "--batch-size", "64", "--synthetic-n", "96",
        "--seed", "5", "--out-dir", str(tmp_path),
    ]


class TestParsing:
    def test_all_documented_flags_exist(self):
        parser = build_parser()
        args = parser.parse_args(
            [
                "train",
                "--dataset", "cifar10", "--arch", "conv4", "--mask-lr", "25",
                "--scale-lr", "0.5", "--momentum", "0.8", "--max-epochs", "10",
                "--patience", "2", "--batch-size", "32", "--temperature", "0.5",
                "--rescale", "dynamic", "--weights", "signed-constant",
                "--augment", "on", "--eval", "averaging", "--avg-samples", "4",
                "--seed", "9", "--out-dir", "x", "--data-dir", "y",
                "--dwr-reading", "prune", "--mask-per", "epoch",
                "--mask-last-layer", "off",
            ]
        )
        assert args.arch == "conv4"
        assert args.dwr_reading == "prune"

    def test_bad_choice_is_usage_error(self, capsys):
        assert run("train", "--rescale", "bogus") == 1

    def test_unknown_command_is_usage_error(self):
        assert run("frobnicate") == 1

    def test_config_file_parsed_and_flags_win(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("mask_lr = 7.5\nrescale = smart  # learned scale\n\nseed=3\n")
        opts = parse_config_file(cfg)
        assert opts == {"mask_lr": "7.5", "rescale": "smart", "seed": "3"}

    def test_config_file_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n")
        assert run("train", "--config", str(cfg)) == 1

    def test_missing_data_dir_is_data_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("GUMBELMASK_DATA_DIR", raising=False)
        assert run("train", "--dataset", "cifar10", "--out-dir", str(tmp_path)) == 2


class TestTrainCommand:
    def test_writes_csv_json_checkpoint(self, tmp_path, quick_flags):
        assert run("train", *quick_flags) == 0
        assert (tmp_path / "train_log.csv").is_file()
        assert (tmp_path / "checkpoint.bin").is_file()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config"]["seed"] == 5
        assert 0.0 <= summary["test_acc"] <= 1.0
        header = (tmp_path / "train_log.csv").read_text().splitlines()[0]
        assert header.startswith("epoch,train_loss,val_acc,pruning_rate,epoch_seconds")

    def test_summary_config_reproduces_run(self, tmp_path, quick_flags):
        assert run("train", *quick_flags) == 0
        first = (tmp_path / "train_log.csv").read_text()
        summary = json.loads((tmp_path / "summary.json").read_text())
        redo = tmp_path / "redo"
        flags = ["train", "--out-dir", str(redo)]
        for key, value in summary["config"].items():
            if key == "out_dir" or value is None:
                continue
            flag = "--" + key.replace("_", "-")
            if isinstance(value, bool):
                value = "on" if value else "off"
            flags += [flag, str(value)]
        assert run(*flags) == 0
        second = (redo / "train_log.csv").read_text()

        def strip_seconds(text):
            rows = [line.split(",") for line in text.splitlines()]
            return [row[:4] + row[5:] for row in rows]

        assert strip_seconds(first) == strip_seconds(second)

    def test_checkpoint_loads_back(self, tmp_path, quick_flags):
        assert run("train", *quick_flags) == 0
        net, config = load_checkpoint(tmp_path / "checkpoint.bin")
        assert config["arch"] == "mlp"
        assert len(net.masked_layers) == 3


class TestEvalCommand:
    def test_eval_both_modes(self, tmp_path, quick_flags, capsys):
        assert run("train", *quick_flags) == 0
        capsys.readouterr()  # drop the train summary line
        ck = str(tmp_path / "checkpoint.bin")
        base = [
            "--dataset", "synthetic", "--arch", "mlp", "--synthetic-n", "96",
            "--seed", "5",
        ]
        assert run("eval", "--checkpoint", ck, *base, "--eval", "threshold") == 0
        thr = json.loads(capsys.readouterr().out)
        assert thr["mode"] == "threshold"
        assert run("eval", "--checkpoint", ck, *base, "--eval", "averaging") == 0
        avg = json.loads(capsys.readouterr().out)
        assert len(avg["per_sample_accuracy"]) == 10


class TestAblateCommand:
    def test_grid_shape_and_golden_header(self, tmp_path):
        out = tmp_path / "grid"
        assert (
            run(
                "ablate", "--dataset", "synthetic", "--arch", "mlp",
                "--synthetic-n", "64", "--max-epochs", "2", "--patience", "2",
                "--batch-size", "64", "--avg-samples", "2", "--seed", "1",
                "--out-dir", str(out),
            )
            == 0
        )
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[0] == ABLATION_HEADER
        assert len(lines) == 1 + 8  # {none, wr, sc, wr+sc} x {augment off, on}
        variants = {line.split(",")[2] for line in lines[1:]}
        assert variants == {"none", "wr", "sc", "wr+sc"}


class TestVerifyCommand:
    def test_fast_verify_passes(self, capsys):
        assert run("verify", "--fast") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
