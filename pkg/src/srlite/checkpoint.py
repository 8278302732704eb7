"""Sectioned binary checkpoint format.

Layout (all integers little-endian)::

    magic    8 bytes  b"SRLTCKPT"
    version  u32
    section* tag (4 ASCII bytes), length u64, payload
             META  UTF-8 JSON object (sorted keys)
             TENS  u32 count, then per tensor:
                   u32 name length, UTF-8 name, u8 dtype code, u8 rank,
                   u64 dims[rank], raw little-endian payload
             END\\0 zero-length terminator

Writing the same state twice produces identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"SRLTCKPT"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}

__all__ = [
    "CheckpointError",
    "CheckpointFormatError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "MissingParameterError",
    "save_checkpoint",
    "load_checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
]


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Not a checkpoint, or structurally malformed."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class MissingParameterError(CheckpointError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing parameter"


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def encode_checkpoint(tensors: "dict[str, np.ndarray]", meta: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(_section(b"META", json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")))
    body = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        body.append(struct.pack("<I", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        body.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    parts.append(_section(b"TENS", b"".join(body)))
    parts.append(_section(b"END\0", b""))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    r = _Reader(buf)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    meta = None
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    while True:
        tag = r.take(4)
        (length,) = r.unpack("<Q")
        payload = r.take(length)
        if tag == b"END\0":
            break
        if tag == b"META":
            try:
                meta = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise CheckpointFormatError(f"corrupt META section: {e}") from None
        elif tag == b"TENS":
            _read_tensors(_Reader(payload), tensors)
        else:
            raise CheckpointFormatError(f"unknown section tag {tag!r}")
    if meta is None:
        raise CheckpointFormatError("checkpoint has no META section")
    return tensors, meta


def _read_tensors(r: _Reader, out: dict) -> None:
    (count,) = r.unpack("<I")
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointFormatError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        dt = _DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(n * dt.itemsize)
        arr = np.frombuffer(raw, dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    path = Path(path)
    data = encode_checkpoint(tensors, meta)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    return decode_checkpoint(path.read_bytes())


def require(tensors: dict, name: str) -> np.ndarray:
    try:
        return tensors[name]
    except KeyError:
        raise MissingParameterError(f"checkpoint is missing parameter {name!r}") from None
