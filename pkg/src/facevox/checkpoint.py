"""Checkpoint container: magic "AGCK", u32 format version, length-prefixed
preset name and JSON metadata, then length-prefixed named tensors (u32 rank,
u32 extents, little-endian f32 payload) for parameters and optimizer state,
closed by a CRC32 of all preceding bytes. Writes are atomic
(write-temp-then-rename)."""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChecksumMismatchError, DataError, TruncatedCheckpointError,
    VersionMismatchError,
)

__all__ = ["CheckpointData", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"AGCK"
VERSION = 1


@dataclass
class CheckpointData:
    preset: str
    meta: dict
    params: dict        # name -> np.ndarray (float32)
    opt_state: dict     # name -> np.ndarray (float32)


def _pack_str(buf, text):
    raw = text.encode("utf-8")
    buf += struct.pack("<I", len(raw))
    buf += raw


def _pack_tensors(buf, tensors):
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        _pack_str(buf, name)
        buf += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            buf += struct.pack("<I", extent)
        buf += arr.astype("<f4", copy=False).tobytes()


def save_checkpoint(path, data):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    _pack_str(buf, data.preset)
    _pack_str(buf, json.dumps(data.meta, sort_keys=True))
    _pack_tensors(buf, data.params)
    _pack_tensors(buf, data.opt_state)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise TruncatedCheckpointError(
                f"{self.path}: expected {n} more bytes at offset {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")

    def tensors(self):
        out = {}
        for _ in range(self.u32()):
            name = self.string()
            rank = self.u32()
            shape = tuple(self.u32() for _ in range(rank))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape)
            out[name] = data.astype(np.float32)
        return out


def load_checkpoint(path):
    raw = open(path, "rb").read()
    if len(raw) < 12:
        raise TruncatedCheckpointError(f"{path}: file too short")
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {VERSION}")

    reader = _Reader(raw[:-4], path)
    reader.pos = 8
    preset = reader.string()
    meta = json.loads(reader.string())
    params = reader.tensors()
    opt_state = reader.tensors()
    if reader.pos != len(raw) - 4:
        raise TruncatedCheckpointError(f"{path}: trailing bytes before checksum")

    stored = struct.unpack_from("<I", raw, len(raw) - 4)[0]
    actual = zlib.crc32(raw[:-4])
    if stored != actual:
        raise ChecksumMismatchError(
            f"{path}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return CheckpointData(preset=preset, meta=meta, params=params, opt_state=opt_state)
