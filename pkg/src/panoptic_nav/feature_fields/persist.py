"""Versioned binary format for feature clouds.

Layout (little-endian): magic ``PNFC``, u32 version, u32 feature dim,
f64 voxel size, u64 point count, then one record per point:
3 x f32 position, dim x f16 feature, u32 source step.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from ..config import DEFAULT, FieldConfig, SimConfig
from .cloud import FeatureCloud

MAGIC = b"PNFC"
VERSION = 1
_HEADER = struct.Struct("<4sIIdQ")


class CloudFormatError(ValueError):
    """Corrupt or incompatible cloud file; ``offset`` is the byte position
    where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([("pos", "<f4", (3,)), ("feat", "<f2", (dim,)), ("step", "<u4")])


def persist(cloud: FeatureCloud) -> bytes:
    buf = io.BytesIO()
    write_cloud(buf, cloud)
    return buf.getvalue()


def write_cloud(f, cloud: FeatureCloud) -> None:
    rec = np.empty(len(cloud), record_dtype(cloud.dim))
    rec["pos"] = cloud.positions
    rec["feat"] = cloud.features
    rec["step"] = cloud.steps
    f.write(_HEADER.pack(MAGIC, VERSION, cloud.dim, cloud.cfg.voxel, len(rec)))
    f.write(rec.tobytes())


def read_header(data: bytes) -> tuple[int, float, int]:
    """Validate the header; returns ``(dim, voxel, count)``."""
    if len(data) < _HEADER.size:
        raise CloudFormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, dim, voxel, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CloudFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CloudFormatError(f"unsupported version {version} (expected {VERSION})", 4)
    if dim <= 0 or not voxel > 0:
        raise CloudFormatError("invalid header fields", 8)
    need = _HEADER.size + count * record_dtype(dim).itemsize
    if len(data) < need:
        raise CloudFormatError(f"truncated: expected {need} bytes for {count} points, got {len(data)}", len(data))
    if len(data) > need:
        raise CloudFormatError(f"{len(data) - need} trailing bytes after {count} points", need)
    return dim, voxel, count


def restore(data: bytes, cfg: FieldConfig = DEFAULT.fields, sim: SimConfig = DEFAULT.sim,
            backend=None) -> FeatureCloud:
    dim, voxel, count = read_header(data)
    rec = np.frombuffer(data, record_dtype(dim), count=count, offset=_HEADER.size)
    if voxel != cfg.voxel:
        from dataclasses import replace

        cfg = replace(cfg, voxel=voxel)
    cloud = FeatureCloud(cfg, sim, dim, backend)
    cloud._pos = rec["pos"].astype(np.float32)
    cloud._feat = rec["feat"].astype(np.float32)
    cloud._step = rec["step"].astype(np.uint32)
    if not np.all(np.isfinite(cloud._pos)):
        raise CloudFormatError("non-finite point positions", _HEADER.size)
    return cloud


def save(path: str | os.PathLike, cloud: FeatureCloud) -> None:
    with open(path, "wb") as f:
        write_cloud(f, cloud)


def load(path: str | os.PathLike, **kw) -> FeatureCloud:
    with open(path, "rb") as f:
        return restore(f.read(), **kw)
