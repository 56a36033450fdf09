"""Checkpoint serialization.

Layout (all integers little-endian uint32, buffers little-endian float32
row-major, so files are bit-identical across platforms):

    magic b"QADW" | version | n_tensors
    per tensor: name_len | name utf-8 | ndim | dims... | data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from qad.errors import FormatError
from qad.nn.layers import ModelSpec, ParameterSet, param_shapes
from qad.nn.tensor import Tensor

MAGIC = b"QADW"
VERSION = 1


def save_checkpoint(params: ParameterSet, path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path, expected: ModelSpec | None = None) -> ParameterSet:
    """Read a checkpoint; optionally validate shapes against a model spec."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
            off += 4 * n
            params[name] = Tensor(data.astype(np.float32), requires_grad=True)
        if off != len(blob):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc

    if expected is not None:
        want = param_shapes(expected)
        have = {name: t.data.shape for name, t in params.items()}
        if want != have:
            raise FormatError(f"{path}: checkpoint does not match model spec: {have} vs expected {want}")
    return ParameterSet(params)
