"""Dataset frame serialization.

Each rendered frame becomes one directory: the color plane as PNG, every
label plane as a raw little-endian binary with a 16-byte header, and the
keypoint/instance annotation as JSON.  The format is documented in
docs/formats.md and round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import LabelFrame

PLANE_MAGIC = b"LPL1"
_DTYPE_CODES = {np.dtype(np.uint8): 1, np.dtype(np.float32): 2}
_CODE_DTYPES = {1: np.dtype(np.uint8), 2: np.dtype(np.float32)}
_HEADER = struct.Struct("<4sHHII")  # magic, dtype, channels, height, width

PLANE_FILES = ("depth", "part", "uv", "normal", "instance")


class FrameIOError(Exception):
    pass


def write_plane(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.ndim == 2:
        channels = 1
    elif arr.ndim == 3:
        channels = arr.shape[2]
    else:
        raise FrameIOError(f"plane must be (H,W) or (H,W,C), got shape {arr.shape}")
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise FrameIOError(f"unsupported plane dtype {arr.dtype}")
    header = _HEADER.pack(PLANE_MAGIC, code, channels, arr.shape[0], arr.shape[1])
    data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(header + data)


def read_plane(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FrameIOError(f"{path}: truncated header")
    magic, code, channels, height, width = _HEADER.unpack_from(raw)
    if magic != PLANE_MAGIC:
        raise FrameIOError(f"{path}: bad magic {magic!r}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise FrameIOError(f"{path}: unknown dtype code {code}")
    expect = height * width * channels * dtype.itemsize
    body = raw[_HEADER.size:]
    if len(body) != expect:
        raise FrameIOError(f"{path}: payload is {len(body)} bytes, expected {expect}")
    arr = np.frombuffer(body, dtype=dtype.newbyteorder("<")).astype(dtype)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return arr.reshape(shape)


def write_frame(frame: LabelFrame, dir_path: str | Path) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.color, mode="RGB").save(dir_path / "color.png")
    write_plane(dir_path / "depth.bin", frame.depth)
    write_plane(dir_path / "part.bin", frame.part)
    write_plane(dir_path / "uv.bin", frame.uv)
    write_plane(dir_path / "normal.bin", frame.normal)
    write_plane(dir_path / "instance.bin", frame.instance)
    annot = {
        "width": int(frame.color.shape[1]),
        "height": int(frame.color.shape[0]),
        "num_instances": int(frame.num_instances),
        "keypoints": [
            [[float(x), float(y), int(v)] for x, y, v in inst] for inst in frame.keypoints
        ],
    }
    (dir_path / "annot.json").write_text(json.dumps(annot, sort_keys=True, indent=1))


def read_frame(dir_path: str | Path) -> LabelFrame:
    dir_path = Path(dir_path)
    color = np.asarray(Image.open(dir_path / "color.png").convert("RGB"), dtype=np.uint8)
    annot = json.loads((dir_path / "annot.json").read_text())
    kps = np.array(annot["keypoints"], dtype=np.float32).reshape(annot["num_instances"], 17, 3)
    return LabelFrame(
        color=color,
        depth=read_plane(dir_path / "depth.bin"),
        part=read_plane(dir_path / "part.bin"),
        uv=read_plane(dir_path / "uv.bin"),
        normal=read_plane(dir_path / "normal.bin"),
        instance=read_plane(dir_path / "instance.bin"),
        keypoints=kps,
    )


def frame_dirs(dataset_dir: str | Path) -> list[Path]:
    """Sorted frame directories of a dataset directory."""
    root = Path(dataset_dir)
    return sorted(d for d in root.glob("frame_*") if d.is_dir())
