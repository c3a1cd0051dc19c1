"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"MTLT" | version | header length | header JSON (utf-8, sorted keys)
    | tensor count | per tensor: name length | name | rank | dims... | float32 data

Weights come first in model order, then optimizer tensors with the
``opt/`` prefix. Writing a loaded checkpoint reproduces the same bytes.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"MTLT"
VERSION = 1
OPT_PREFIX = "opt/"


@dataclass
class Checkpoint:
    config: dict
    weights: dict                      # name -> float32 array
    optimizer: dict = None             # name -> float32 array
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def header(self):
        return {"config": self.config, "meta": self.meta}


def _u32(value):
    return struct.pack("<I", value)


def to_bytes(ckpt):
    parts = [MAGIC, _u32(ckpt.version)]
    header = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts += [_u32(len(header)), header]
    tensors = list(ckpt.weights.items())
    if ckpt.optimizer:
        tensors += [(OPT_PREFIX + name, value) for name, value in ckpt.optimizer.items()]
    parts.append(_u32(len(tensors)))
    for name, value in tensors:
        if name.startswith(OPT_PREFIX) and name in ckpt.weights:
            raise CheckpointError(f"weight name {name!r} collides with the optimizer prefix")
        arr = np.array(value, dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        parts += [_u32(len(encoded)), encoded, _u32(arr.ndim)]
        parts += [_u32(d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(data):
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    weights, optimizer = {}, {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        if name.startswith(OPT_PREFIX):
            optimizer[name[len(OPT_PREFIX):]] = arr
        else:
            weights[name] = arr
    if reader.pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(config=header.get("config", {}), weights=weights, optimizer=optimizer or None,
                      meta=header.get("meta", {}), version=version)


def save_checkpoint(ckpt, path):
    data = to_bytes(ckpt)
    tmp = f"{os.fspath(path)}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"could not write checkpoint {path}: {exc}") from exc
    return data


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    return from_bytes(data)
