"""Binary checkpoint container.

Layout, little-endian throughout:

    magic   4 bytes  b"DFLB"
    version u32      currently 1
    kind    u32 length + utf-8 model kind tag
    config  u32 length + utf-8 canonical JSON (sorted keys)
    count   u32 tensor records, sorted by unique name
    record  name (u32 length + utf-8)
            dtype u8 (0 = float32, 1 = float64)
            ndim u32, extents u32 each
            nbytes u64, then raw row-major data

Serialization is canonical (sorted names, sorted-key JSON), so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DFLB"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Corrupt, truncated, or incompatible checkpoint container."""


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_checkpoint(path, kind, config, tensors):
    """Write a container; tensor records are sorted by their unique names."""
    names = sorted(tensors)
    if len(set(names)) != len(names):
        raise CheckpointError("tensor record names must be unique")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += _pack_str(kind)
    blob += _pack_str(json.dumps(config, sort_keys=True, separators=(",", ":")))
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"record {name!r} has unsupported dtype {arr.dtype}")
        tag = _DTYPE_TAGS[arr.dtype]
        data = np.ascontiguousarray(arr).astype(_TAG_DTYPES[tag], copy=False).tobytes()
        blob += _pack_str(name)
        blob += struct.pack("<B", tag)
        blob += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += struct.pack("<Q", len(data))
        blob += data
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def read_checkpoint(path):
    """Read a container; returns (kind, config dict, {name: array}).

    Validates the magic, version, record ordering and uniqueness, and that
    every record's byte length matches its shape and element size. Any
    failure raises before a partial model can escape.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint container")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"version mismatch: found {version}, expected {VERSION}")
    kind = r.string()
    config = json.loads(r.string())
    count = r.u32()
    tensors = {}
    prev = None
    for _ in range(count):
        name = r.string()
        if name in tensors:
            raise CheckpointError(f"duplicate record {name!r}")
        if prev is not None and name < prev:
            raise CheckpointError("records are not sorted by name")
        prev = name
        tag = r.u8()
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"record {name!r} has unknown dtype tag {tag}")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        nbytes = r.u64()
        dtype = _TAG_DTYPES[tag]
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"record {name!r} declares {nbytes} bytes but shape {shape} needs {expected}"
            )
        data = r.take(nbytes)
        tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after the last record")
    return kind, config, tensors


def save_model(path, model):
    """Persist a model: its kind tag, config echo, and named parameters."""
    tensors = {name: t.data for name, t in model.named_parameters().items()}
    write_checkpoint(path, model.kind, model.config_dict(), tensors)


def load_model(path):
    """Rebuild a model from a container using its kind tag."""
    kind, config, tensors = read_checkpoint(path)
    from . import serialize

    return serialize.model_from_checkpoint(kind, config, tensors)
