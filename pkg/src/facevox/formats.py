"""On-disk formats: depth rasters, voxel grids, meshes, dataset manifests.

All multi-byte integers and floats are little-endian. Grid bit-packing is
x-fastest then y then z, LSB-first within each byte, padded to a whole byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import DepthView, TriMesh, VoxelGrid

__all__ = [
    "write_depth", "read_depth", "write_grid", "read_grid",
    "write_mesh", "read_mesh",
    "SampleRecord", "write_manifest", "read_manifest",
    "GRID_KIND_BITS", "GRID_KIND_FLOAT",
]

DEPTH_MAGIC = b"DPTH"
GRID_MAGIC = b"VOXG"
GRID_KIND_BITS = 0
GRID_KIND_FLOAT = 1


def write_depth(path, view):
    values = np.asarray(view.values, dtype="<f4")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(values.tobytes())


def read_depth(path):
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != DEPTH_MAGIC:
        raise DataError(f"{path}: not a depth view file")
    w, h = struct.unpack_from("<II", raw, 4)
    need = 12 + 4 * w * h
    if len(raw) < need:
        raise DataError(f"{path}: truncated depth payload")
    values = np.frombuffer(raw, dtype="<f4", count=w * h, offset=12).reshape(h, w)
    return DepthView(values.astype(np.float32))


def write_grid(path, grid, kind=GRID_KIND_BITS):
    values = np.asarray(grid.values)
    n = values.shape[0]
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<IB", n, kind))
        if kind == GRID_KIND_BITS:
            if not np.all((values == 0) | (values == 1)):
                raise ValueError("bit-packed grids require binary occupancy")
            flat = values.reshape(-1).astype(np.uint8)  # [z][y][x] C order: x fastest
            fh.write(np.packbits(flat, bitorder="little").tobytes())
        elif kind == GRID_KIND_FLOAT:
            fh.write(values.astype("<f4").tobytes())
        else:
            raise ValueError(f"unknown grid kind {kind}")


def read_grid(path):
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != GRID_MAGIC:
        raise DataError(f"{path}: not a voxel grid file")
    n, kind = struct.unpack_from("<IB", raw, 4)
    total = n * n * n
    if kind == GRID_KIND_BITS:
        nbytes = (total + 7) // 8
        if len(raw) < 9 + nbytes:
            raise DataError(f"{path}: truncated grid payload")
        bits = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes, offset=9),
                             bitorder="little")[:total]
        values = bits.reshape(n, n, n).astype(np.float32)
    elif kind == GRID_KIND_FLOAT:
        if len(raw) < 9 + 4 * total:
            raise DataError(f"{path}: truncated grid payload")
        values = np.frombuffer(raw, "<f4", total, offset=9).reshape(n, n, n).astype(np.float32)
    else:
        raise DataError(f"{path}: unknown grid kind {kind}")
    return VoxelGrid(values)


def write_mesh(path, mesh, trailing_comments=()):
    """Wavefront-style subset: `v x y z` and `f i j k` lines, 1-based indices.

    trailing_comments are emitted verbatim after the faces (used for the
    per-point distance field export).
    """
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
        for line in trailing_comments:
            fh.write(line.rstrip("\n") + "\n")


def read_mesh(path):
    verts, tris = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0] == "#":
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                tris.append([int(p) - 1 for p in parts[1:4]])
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(tris, dtype=np.int64).reshape(-1, 3))


@dataclass
class SampleRecord:
    depth_path: str
    grid_path: str
    seed: int
    yaw: float
    pitch: float
    roll: float
    expression: float


def write_manifest(path, records, header=None):
    """One tab-separated record per sample; `#`-prefixed header lines carry
    dataset-level metadata such as the shared z normalization range."""
    with open(path, "w") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key} {value}\n")
        for r in records:
            fh.write(f"{r.depth_path}\t{r.grid_path}\t{r.seed}\t"
                     f"{r.yaw:.9g}\t{r.pitch:.9g}\t{r.roll:.9g}\t{r.expression:.9g}\n")


def read_manifest(path):
    """-> (records, header dict). Raises DataError on malformed lines."""
    records = []
    header = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].strip().split(None, 1)
                if len(parts) == 2:
                    header[parts[0]] = parts[1]
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 columns, got {len(cols)}")
            records.append(SampleRecord(
                depth_path=cols[0], grid_path=cols[1], seed=int(cols[2]),
                yaw=float(cols[3]), pitch=float(cols[4]), roll=float(cols[5]),
                expression=float(cols[6])))
    return records, header
