"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FXSP"                  4 bytes magic
    version                  uint32
    header_length            uint64
    header                   UTF-8 JSON, sorted keys, compact separators
    payload                  float32 blobs in directory order

The header holds ``model`` (the ModelConfig, vocabulary included),
``tensors`` (a list of ``{name, dtype, shape, offset}``; offsets count bytes
from the start of the payload) and a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from rfedit.mmdit import MMDiT, ModelConfig

MAGIC = b"FXSP"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
DTYPE = "<f4"


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class OffsetOutOfBoundsError(CheckpointError):
    pass


def dumps(model_config: dict, tensors: dict, meta=None) -> bytes:
    directory, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        directory.append({"name": name, "dtype": "float32", "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(data)
        offset += len(data)
    header = {"model": model_config, "tensors": directory, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def loads(data: bytes):
    """Parse checkpoint bytes into ``(model_config, tensors, meta)``."""
    if len(data) < _PREFIX.size:
        raise TruncatedError("file shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise TruncatedError("header truncated")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header: {exc}") from None
    payload = memoryview(data)[start + hlen :]
    try:
        entries = header["tensors"]
        sizes = []
        for entry in entries:
            if entry["dtype"] != "float32":
                raise CheckpointError(f"{entry['name']}: unsupported dtype {entry['dtype']}")
            sizes.append(4 * int(np.prod(entry["shape"], dtype=np.int64)))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed tensor directory: {exc!r}") from None
    if len(payload) < sum(sizes):
        raise TruncatedError(f"payload has {len(payload)} bytes, directory needs {sum(sizes)}")
    tensors = {}
    for entry, nbytes in zip(entries, sizes):
        off = entry["offset"]
        if off < 0 or off + nbytes > len(payload):
            raise OffsetOutOfBoundsError(f"{entry['name']}: bytes {off}..{off + nbytes} outside payload")
        arr = np.frombuffer(payload[off : off + nbytes], dtype=DTYPE).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float32)
    return header["model"], tensors, header.get("meta", {})


def save(path, model_config: dict, tensors: dict, meta=None):
    with open(path, "wb") as f:
        f.write(dumps(model_config, tensors, meta))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


def save_model(path, model, meta=None):
    save(path, model.config.to_json(), model.state_dict(), meta)


def load_model(path):
    cfg, tensors, meta = load(path)
    model = MMDiT(ModelConfig(**cfg), tensors)
    return model, meta
