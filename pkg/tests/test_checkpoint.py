import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from s5rf.checkpoint import decode, encode, load_checkpoint, read, save_checkpoint
from s5rf.config import ModelConfig
from s5rf.errors import InvalidInputError
from s5rf.layers import S5RFModel


def test_model_round_trip_is_bit_exact(tmp_path):
    cfg = ModelConfig(input_dim=3, layer_sizes=[8, 4], block_size=4, num_classes=2, seed=4)
    model = S5RFModel(cfg, dtype=torch.float64)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, extra={"epoch": 3})
    back = load_checkpoint(path)
    for (k, v), (k2, v2) in zip(model.state_dict().items(), back.state_dict().items()):
        assert k == k2 and v.dtype == v2.dtype and torch.equal(v, v2)
    save_checkpoint(tmp_path / "again.ckpt", back, extra={"epoch": 3})
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    x = torch.rand(2, 10, 3, dtype=torch.float64).round()
    assert torch.equal(model(x), back(x))
    assert read(path)[0]["extra"] == {"epoch": 3}


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.sampled_from(["<f4", "<f8", "<i8", "|u1", "<c16"]))
def test_raw_container_round_trip(seed, dtype):
    r = np.random.default_rng(seed)
    arrays = {f"a{i}": (r.standard_normal(tuple(r.integers(0, 4, r.integers(0, 3)))) * 10).astype(dtype)
              for i in range(3)}
    blob = encode({"k": [1, 2]}, arrays)
    cfg, back = decode(blob)
    assert cfg == {"k": [1, 2]}
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and np.array_equal(back[k], arrays[k])
    assert encode(cfg, back) == blob


def test_bad_inputs():
    blob = encode({}, {"x": np.arange(4)})
    with pytest.raises(InvalidInputError):
        decode(b"NOTACKPT" + blob[8:])
    with pytest.raises(InvalidInputError):
        decode(blob[:-3])
