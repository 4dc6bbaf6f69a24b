"""Checkpoint file: named arrays in a flat little-endian binary container.

Layout (all little-endian): magic b"PLCK", uint32 entry count, then per
entry sorted by name: uint16 name length, name utf-8, uint8 dtype code
(1 uint8, 2 float32, 3 float64, 4 int32), uint8 ndim, ndim x uint32 dims,
raw array bytes.  Entry order is canonical, so identical states produce
bit-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PLCK"
_DTYPES = {
    1: np.dtype(np.uint8),
    2: np.dtype(np.float32),
    3: np.dtype(np.float64),
    4: np.dtype(np.int32),
}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    pass


def save_checkpoint(state: dict[str, np.ndarray], path: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dtype = _DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(raw[off : off + nbytes], dtype=dtype.newbyteorder("<"))
        out[name] = arr.astype(dtype).reshape(shape)
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return out
