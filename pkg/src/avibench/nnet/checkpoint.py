"""Checkpoint files: u32 header length, JSON header, little-endian f32 parameter blob."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DecodeError
from .model import ModelConfig, Params

MAGIC = b"AVCK"


def save_checkpoint(path, model_cfg: ModelConfig, params: Params, input_shape, **meta) -> None:
    names = sorted(params)
    header = {
        "model": model_cfg.to_dict(),
        "input_shape": list(input_shape),
        "params": [{"name": k, "shape": list(params[k].shape)} for k in names],
        **meta,
    }
    head = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(params[k], dtype="<f4").tobytes() for k in names)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<I", len(head)) + head + blob)


def load_checkpoint(path) -> tuple[ModelConfig, Params, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DecodeError(f"{path}: not a checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + n])
    offset = 8 + n
    params: Params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4
        chunk = data[offset:offset + size]
        if len(chunk) != size:
            raise DecodeError(f"{path}: truncated parameter blob")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
        offset += size
    return ModelConfig.from_dict(header["model"]), params, header
