"""Binary checkpoint format.

Layout, all integers unsigned 32-bit little-endian::

    b"A3CX"  version  len(descriptor) descriptor(utf-8)  n_tensors
    repeated n_tensors times:
        len(name) name(utf-8)  rank  dim_0 .. dim_{rank-1}  float32 LE data

Files are written to a temporary sibling and renamed into place, so a failed
save never leaves a partial checkpoint behind.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .mapper import LinearMapper
from .net import NetArch, ParameterSet, ShapeError

MAGIC = b"A3CX"
VERSION = 1
MAPPER_DESCRIPTOR = "linear-mapper"
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def _u32(value: int) -> bytes:
    return _U32.pack(value)


def encode(descriptor: str, tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _u32(VERSION)]
    desc = descriptor.encode()
    parts += [_u32(len(desc)), desc, _u32(len(tensors))]
    for name, t in tensors.items():
        raw = name.encode()
        parts += [_u32(len(raw)), raw, _u32(t.ndim)]
        parts += [_u32(d) for d in t.shape]
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint: shape data runs past end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode()
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"bad text field: {exc}") from None


def decode(data: bytes) -> tuple[str, dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not an A3CX checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    descriptor = r.text()
    tensors = {}
    for _ in range(r.u32()):
        name = r.text()
        shape = tuple(r.u32() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last tensor")
    return descriptor, tensors


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save_checkpoint(params: ParameterSet, path) -> None:
    params.validate()
    _atomic_write(path, encode(params.arch.to_text(), params.tensors))


def load_checkpoint(path) -> ParameterSet:
    with open(path, "rb") as fh:
        descriptor, tensors = decode(fh.read())
    try:
        params = ParameterSet(NetArch.from_text(descriptor), tensors).validate()
    except ShapeError as exc:
        raise CheckpointError(f"checkpoint does not match its descriptor: {exc}") from None
    return params


def save_mapper(mapper: LinearMapper, path) -> None:
    desc = (f"{MAPPER_DESCRIPTOR};pairs={mapper.n_pairs};mse={mapper.residual_mse!r};"
            f"shape={','.join(map(str, mapper.frame_shape))}")
    _atomic_write(path, encode(desc, {"mapper.W": mapper.weights}))


def load_mapper(path) -> LinearMapper:
    with open(path, "rb") as fh:
        descriptor, tensors = decode(fh.read())
    head, *items = descriptor.split(";")
    if head != MAPPER_DESCRIPTOR or "mapper.W" not in tensors:
        raise CheckpointError("not a linear-mapper checkpoint")
    meta = dict(item.split("=", 1) for item in items)
    shape = tuple(int(v) for v in meta["shape"].split(","))
    w = tensors["mapper.W"]
    if w.ndim != 2 or w.shape[0] != int(np.prod(shape)):
        raise CheckpointError(f"mapper.W shape {w.shape} does not match frame shape {shape}")
    return LinearMapper(w, int(meta["pairs"]), float(meta["mse"]), shape)
