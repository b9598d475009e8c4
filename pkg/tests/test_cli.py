"""Command-line behaviour: outputs, exit codes, config layering and resume."""

import csv
import json

import pytest

from conftest import TEST_FILES, TRAIN_FILES
from wuxingnet import cli

TRAIN = ["--train-images", str(TRAIN_FILES[0]), "--train-labels", str(TRAIN_FILES[1]),
         "--test-images", str(TEST_FILES[0]), "--test-labels", str(TEST_FILES[1])]
EVAL = ["--images", str(TEST_FILES[0]), "--labels", str(TEST_FILES[1])]
BASE = ["--images", str(TRAIN_FILES[0]), "--labels", str(TRAIN_FILES[1])]

pytestmark = pytest.mark.usefixtures("mnist_train")


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def tiny_topology(tmp_path):
    path = tmp_path / "tiny.json"
    assert run("build", "--layers", "784,12,10", "--seed", 1, "--out", path) == 0
    return path


def small_train(tmp_path, topology, *extra):
    return run("train", "--topology", topology, "--out-dir", tmp_path, "--train-size", 20, "--test-size", 10,
               *TRAIN, *extra)


def data_rows(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


class TestBuild:
    def test_model1_report(self, tmp_path, capsys):
        assert run("build", "--model", "MODEL1", "--seed", 7, "--out-dir", tmp_path) == 0
        out = capsys.readouterr().out
        assert sum(line.startswith("gap ") for line in out.splitlines()) == 5
        assert "average LR (pooled)" in out
        assert (tmp_path / "MODEL1.json").exists()

    def test_small_layers(self, tmp_path, capsys):
        assert run("build", "--layers", "3,4", "--out-dir", tmp_path) == 0
        assert "gap 0:" in capsys.readouterr().out

    def test_same_seed_same_bytes(self, tmp_path):
        run("build", "--layers", "30,20,10", "--seed", 3, "--out", tmp_path / "a.json")
        run("build", "--layers", "30,20,10", "--seed", 3, "--out", tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    @pytest.mark.parametrize("argv", [["--layers", "3,0"], ["--layers", "a,b"], ["--model", "MODEL9"]])
    def test_bad_arguments(self, tmp_path, argv):
        assert run("build", *argv, "--out-dir", tmp_path) == cli.EXIT_USAGE

    def test_malformed_flag(self):
        with pytest.raises(SystemExit) as info:
            run("build", "--seed", "x")
        assert info.value.code == 2


class TestTrain:
    def test_zero_epochs_writes_baseline_row(self, tmp_path, tiny_topology):
        assert small_train(tmp_path, tiny_topology, "--epochs", 0) == 0
        text = (tmp_path / "metrics.csv").read_text()
        assert data_rows(tmp_path / "metrics.csv")[0] == "epoch,split,accuracy,mean_abs_g2,min_c,max_c"
        assert [r.split(",")[:2] for r in data_rows(tmp_path / "metrics.csv")[1:]] == [["0", "test"]]
        assert "# kt = " in text and "# shuffle_seed = " in text

    def test_resume_matches_uninterrupted(self, tmp_path, tiny_topology):
        full, part = tmp_path / "full", tmp_path / "part"
        assert small_train(full, tiny_topology, "--epochs", 2) == 0
        assert small_train(part, tiny_topology, "--epochs", 1) == 0
        assert run("train", "--resume", part / "checkpoint.json", "--epochs", 2, "--out-dir", part) == 0
        assert (full / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()
        a = json.loads((full / "checkpoint.json").read_text())
        b = json.loads((part / "checkpoint.json").read_text())
        assert a["connections"] == b["connections"]

    def test_rerun_is_byte_identical(self, tmp_path, tiny_topology):
        assert small_train(tmp_path / "a", tiny_topology, "--epochs", 1) == 0
        assert small_train(tmp_path / "b", tiny_topology, "--epochs", 1, "--threads", 2) == 0
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_config_file_and_flag_precedence(self, tmp_path, tiny_topology):
        cfg = tmp_path / "run.toml"
        cfg.write_text("seed = 5\n[train]\nkt = 2.0\nstep_scale = 0.01\n")
        assert small_train(tmp_path, tiny_topology, "--epochs", 0, "--config", cfg, "--kt", 0.5) == 0
        text = (tmp_path / "metrics.csv").read_text()
        assert "# kt = 0.5" in text and "# step_scale = 0.01" in text and "# seed = 5" in text

    def test_unknown_config_key(self, tmp_path, tiny_topology):
        cfg = tmp_path / "run.toml"
        cfg.write_text("[train]\nlearning_speed = 1\n")
        assert small_train(tmp_path, tiny_topology, "--config", cfg) == cli.EXIT_USAGE

    def test_missing_data_file(self, tmp_path, tiny_topology):
        argv = ["train", "--topology", tiny_topology, "--out-dir", tmp_path, *TRAIN]
        argv[argv.index("--train-images") + 1] = tmp_path / "missing.gz"
        assert run(*argv) == cli.EXIT_DATA

    def test_invalid_hyperparameter(self, tmp_path, tiny_topology):
        assert small_train(tmp_path, tiny_topology, "--kt", 0) == cli.EXIT_USAGE


class TestEval:
    @pytest.fixture
    def checkpoint(self, tmp_path, tiny_topology):
        assert small_train(tmp_path / "run", tiny_topology, "--epochs", 0) == 0
        return tmp_path / "run" / "checkpoint.json"

    def test_twice_identical(self, tmp_path, checkpoint, capsys):
        outs = []
        for name in ("a", "b"):
            assert run("eval", "--checkpoint", checkpoint, "--size", 20, "--out-dir", tmp_path / name, *EVAL) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1] and outs[0].startswith("accuracy ")
        assert (tmp_path / "a" / "confusion.csv").read_bytes() == (tmp_path / "b" / "confusion.csv").read_bytes()
        rows = list(csv.reader(data_rows(tmp_path / "a" / "confusion.csv")))
        assert rows[0] == ["true"] + [f"pred_{k}" for k in range(10)]
        assert sum(int(v) for row in rows[1:] for v in row[1:]) == 20

    def test_empty_subset(self, tmp_path, checkpoint):
        assert run("eval", "--checkpoint", checkpoint, "--size", 0, "--out-dir", tmp_path, *EVAL) == cli.EXIT_DATA

    def test_topology_mismatch(self, tmp_path, checkpoint):
        other = tmp_path / "other.json"
        run("build", "--layers", "784,12,10", "--seed", 99, "--out", other)
        argv = ("eval", "--checkpoint", checkpoint, "--topology", other, "--size", 5, "--out-dir", tmp_path, *EVAL)
        assert run(*argv) == cli.EXIT_USAGE

    def test_missing_checkpoint_flag(self, tmp_path):
        assert run("eval", "--out-dir", tmp_path, *EVAL) == cli.EXIT_USAGE


class TestBaseline:
    def test_single_cell(self, tmp_path):
        argv = ("baseline", "--lr", "0.5", "--layers", "784,16,10", "--size", 50, "--epochs", 1, "--seeds", "0",
                "--out-dir", tmp_path, *BASE)
        assert run(*argv) == 0
        rows = data_rows(tmp_path / "baseline.csv")
        assert rows[0] == "lr,epoch,accuracy,seed" and len(rows) == 2
        assert rows[1].startswith("0.5,1,")

    @pytest.mark.parametrize("ratios", ["0", "1.5", "x"])
    def test_bad_ratio(self, tmp_path, ratios):
        assert run("baseline", "--lr", ratios, "--size", 10, "--out-dir", tmp_path, *BASE) == cli.EXIT_USAGE
