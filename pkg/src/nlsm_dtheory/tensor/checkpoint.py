"""Binary MPS checkpoints.

Byte layout (all integers little-endian):

    offset  size  content
    0       8     magic b"NLSMMPS\\0"
    8       4     format version (uint32, currently 1)
    12      8     header length H (uint64)
    20      H     UTF-8 JSON header
    20+H    ...   tensor payloads, C order, back to back

The header holds ``dtype`` (numpy string, little-endian), ``shapes``,
``center``, ``trunc_error``, optional ``geometry`` and a free-form ``log``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .mps import MPS

MAGIC = b"NLSMMPS\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(psi: MPS, geometry: dict | None = None, log: dict | None = None) -> bytes:
    dtype = np.dtype(psi.dtype).newbyteorder("<")
    header = {
        "dtype": dtype.str,
        "shapes": [list(t.shape) for t in psi.tensors],
        "bond_dims": psi.bond_dims(),
        "center": psi.center,
        "trunc_error": psi.trunc_error,
        "geometry": geometry,
        "log": log or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(t, dtype=dtype).tobytes() for t in psi.tensors]
    return b"".join(parts)


def loads(data: bytes) -> tuple[MPS, dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not an MPS checkpoint")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen].decode())
    dtype = np.dtype(header["dtype"])
    pos = 20 + hlen
    tensors = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(data):
            raise CheckpointError("truncated payload")
        tensors.append(np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(shape).copy())
        pos += nbytes
    if pos != len(data):
        raise CheckpointError("trailing bytes after payload")
    return MPS(tensors, header["center"], header["trunc_error"]), header


def save(path: str | Path, psi: MPS, geometry: dict | None = None, log: dict | None = None) -> None:
    Path(path).write_bytes(dumps(psi, geometry, log))


def load(path: str | Path) -> tuple[MPS, dict]:
    return loads(Path(path).read_bytes())
