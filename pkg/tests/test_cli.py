import numpy as np
import pytest

from mpnet import cli
from mpnet.data import Dataset, read_container, write_container

TINY = """\
synth.trials_per_class = 6
synth.test_trials_per_class = 4
synth.channels = 6
synth.samples = 400
synth.seed = 2
frontend.features = 6
spdnet.dims = 6,4,2
train.max_epochs = 3
train.patience = 1
train.batch_size = 6
"""


@pytest.fixture
def tiny(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    return tmp_path, cfg


def test_synth_train_eval(tiny, capsys):
    tmp, cfg = tiny
    assert cli.main(["synth", "--spec", str(cfg), "--out", str(tmp / "tr.bin"), "--test-out", str(tmp / "te.bin")]) == 0
    tr, te = read_container(tmp / "tr.bin"), read_container(tmp / "te.bin")
    assert tr.x.shape == (12, 6, 400) and te.x.shape == (8, 6, 400)
    args = ["train", "--config", str(cfg), "--data", str(tmp / "tr.bin"), "--model-out", str(tmp / "m.bin"), "--log", str(tmp / "log")]
    assert cli.main(args) == 0
    assert (tmp / "log").read_text().startswith("epoch=1 ")
    assert cli.main(["eval", "--model", str(tmp / "m.bin"), "--data", str(tmp / "te.bin"), "--report", str(tmp / "r.txt")]) == 0
    report = dict(line.split("=") for line in (tmp / "r.txt").read_text().splitlines())
    assert set(report) == {"acc", "kappa", "f1", "params", "flops"}
    assert 0.0 <= float(report["acc"]) <= 1.0
    capsys.readouterr()
    assert cli.main(["bench", "--config", str(cfg), "--data", str(tmp / "tr.bin"), "--epochs", "1", "--warmup", "0"]) == 0
    assert "ratio=" in capsys.readouterr().out


def test_footprint_command(capsys):
    assert cli.main(["footprint"]) == 0
    out = capsys.readouterr().out
    assert "spdnet" in out and "9454" in out


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--seed", "1"]) == 0
    assert "worst=" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["nope"],
        ["train", "--config", "x.cfg"],
        ["synth", "--spec", "/nonexistent.cfg", "--out", "o.bin"],
    ],
)
def test_invalid_usage_exits_1(argv, capsys):
    assert cli.main(argv) == 1


def test_bad_config_exits_1(tiny, capsys):
    tmp, cfg = tiny
    cfg.write_text("train.bogus = 1\n")
    assert cli.main(["synth", "--spec", str(cfg), "--out", str(tmp / "o.bin")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_corrupt_inputs_exit_1(tiny):
    tmp, cfg = tiny
    (tmp / "junk.bin").write_bytes(b"garbage")
    assert cli.main(["train", "--config", str(cfg), "--data", str(tmp / "junk.bin"), "--model-out", str(tmp / "m")]) == 1
    write_container(Dataset(np.zeros((2, 6, 400), np.float32), [0, 1], 250.0, 2), tmp / "ok.bin")
    assert cli.main(["eval", "--model", str(tmp / "junk.bin"), "--data", str(tmp / "ok.bin"), "--report", str(tmp / "r")]) == 1


def test_numerical_failure_exits_2(tiny, capsys):
    tmp, cfg = tiny
    cfg.write_text(TINY + "frontend.ridge_scale = 0.0\nfrontend.ridge_floor = 0.0\n")
    write_container(Dataset(np.zeros((4, 6, 400), np.float32), [0, 1, 0, 1], 250.0, 2), tmp / "zero.bin")
    args = ["train", "--config", str(cfg), "--data", str(tmp / "zero.bin"), "--model-out", str(tmp / "m.bin")]
    assert cli.main(args) == 2
    assert "numerical failure" in capsys.readouterr().err
