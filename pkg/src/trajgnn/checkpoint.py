"""Versioned binary checkpoints.

Layout (little-endian):

    magic   b"TGCK"
    u32     header length in bytes
    bytes   UTF-8 JSON header: schema_version, model config, and an
            index of (name, shape, offset) for parameters and buffers
    f32     payload: all parameter arrays then all buffer arrays,
            concatenated in index order

Values are stored as 32-bit floats; a model trained in float32 round-
trips exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .model import Model, config_from_dict, config_to_dict

MAGIC = b"TGCK"
SCHEMA_VERSION = 1


def save_checkpoint(path, model: Model) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = model.named_parameters()
    buffers = model.named_buffers()
    index = []
    chunks = []
    offset = 0
    arrays = [("params", name, p.data) for name, p in params.items()]
    arrays += [("buffers", name, b) for name, b in buffers.items()]
    for section, name, value in arrays:
        arr = np.ascontiguousarray(value, dtype="<f4")
        index.append({
            "section": section,
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
        })
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(model.config),
        "index": index,
    }).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)
    return path


def load_checkpoint(path) -> Model:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + header_len].decode())
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported checkpoint schema {header.get('schema_version')}"
        )
    config = config_from_dict(header["config"])
    model = Model(config)
    payload = np.frombuffer(raw, "<f4", offset=8 + header_len)
    params = model.named_parameters()
    for entry in header["index"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = payload[entry["offset"] : entry["offset"] + size]
        arr = arr.reshape(entry["shape"]).astype(config.np_dtype)
        if entry["section"] == "params":
            if entry["name"] not in params:
                raise ConfigError(f"checkpoint parameter {entry['name']!r} unknown")
            target = params[entry["name"]]
            if tuple(target.shape) != tuple(entry["shape"]):
                raise ConfigError(
                    f"checkpoint parameter {entry['name']!r} has shape "
                    f"{entry['shape']}, model expects {list(target.shape)}"
                )
            target.data[...] = arr
        else:
            model.set_buffer(entry["name"], arr)
    return model
