import json

import numpy as np
import pytest
import tomli

from s5rf.cli import build_parser, format_defaults, main
from s5rf.config import RunConfig, from_dict, to_dict
from s5rf.data import read_evsq

TINY = """
[model]
input_dim = 4
layer_sizes = [8]
block_size = 8
num_classes = 2
scan_mode = "sequential"

[train]
epochs = 1
batch_size = 8
lr_connections = 0.01

[data]
task = "freq"
train_samples = 16
test_samples = 8
seq_len = 24
channels = 4
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def test_defaults_render_as_valid_config():
    raw = tomli.loads(format_defaults())
    assert to_dict(from_dict(raw)) == to_dict(RunConfig())
    assert "lr_connections" in build_parser().format_help()


def test_train_eval_inspect(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
    for name in ("config.json", "metrics.csv", "seed.txt", "final.ckpt"):
        assert (out / name).exists()
    assert len((out / "metrics.csv").read_text().splitlines()) == 2
    assert main(["synth", "--classes", "2", "--out", str(tmp_path / "d"), "--length", "24",
                 "--channels", "4", "--train", "4", "--test", "3"]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(tmp_path / "d" / "test.tsv")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0 <= report["accuracy"] <= 1 and report["convention"] == "spikes"
    assert main(["inspect", "--checkpoint", str(out / "final.ckpt")]) == 0
    text = capsys.readouterr().out
    assert "parameters:" in text and "layer 0: H=8" in text


def test_convert(tmp_path):
    src = tmp_path / "ev.csv"
    src.write_text("time_us,channel\n0,0\n500,7\n")
    dst = tmp_path / "ev.evsq"
    assert main(["convert", "--csv", str(src), "--out", str(dst), "--duration", "1000",
                 "--bins", "4", "--channels", "8", "--pool", "2", "--label", "1"]) == 0
    seq = read_evsq(dst)
    assert seq.shape == (4, 4) and seq.raster[0, 0] and seq.raster[2, 3] and seq.label == 1


def test_gradcheck_passes(tiny_config):
    assert main(["gradcheck", "--config", str(tiny_config), "--n-params", "20", "--samples", "1"]) == 0


def test_exit_codes(tmp_path, tiny_config):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nno_such_key = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    bad.write_text("[model]\nlayer_sizes = [10]\nblock_size = 4\n")
    assert main(["gradcheck", "--config", str(bad)]) == 2
    assert main(["inspect", "--checkpoint", str(tmp_path / "missing.ckpt")]) == 2
    # an impossible tolerance must surface as a numeric failure
    assert main(["gradcheck", "--config", str(tiny_config), "--n-params", "5", "--tol", "-1"]) == 3
    blown = tmp_path / "blown.toml"
    blown.write_text(TINY.replace("lr_connections = 0.01", "lr_connections = 1e30").replace("epochs = 1", "epochs = 3"))
    assert main(["train", "--config", str(blown), "--out", str(tmp_path / "blown")]) == 3
