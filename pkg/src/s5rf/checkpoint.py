"""Self-describing checkpoint container.

Layout: ``b"S5RFCKPT"`` | format version u16 | header length u32 | UTF-8 JSON
header (config + array table, sorted keys) | concatenated little-endian
array bytes. Nothing time- or host-dependent is written, so a read followed
by a write reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, model_config_from_dict, to_dict
from .errors import InvalidInputError

MAGIC = b"S5RFCKPT"
FORMAT_VERSION = 1


def encode(config: dict, arrays: dict) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"format_version": FORMAT_VERSION, "config": config, "arrays": table},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def decode(data: bytes):
    if data[: len(MAGIC)] != MAGIC:
        raise InvalidInputError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 6
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    base = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        lo = base + entry["offset"]
        buf = data[lo:lo + entry["nbytes"]]
        if len(buf) != entry["nbytes"]:
            raise InvalidInputError(f"truncated array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header["config"], arrays


def write(path, config: dict, arrays: dict):
    Path(path).write_bytes(encode(config, arrays))


def read(path):
    return decode(Path(path).read_bytes())


def save_checkpoint(path, model, extra=None):
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    config = {"model": to_dict(model.cfg), "extra": extra or {}}
    write(path, config, arrays)


def load_checkpoint(path, dtype=None):
    from .layers import S5RFModel

    config, arrays = read(path)
    cfg = model_config_from_dict(config["model"])
    if dtype is None:
        dtype = torch.from_numpy(arrays["encoder.weight"]).dtype
    model = S5RFModel(cfg, dtype=dtype)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise InvalidInputError(f"checkpoint mismatch: missing={missing} unexpected={unexpected}")
    return model
