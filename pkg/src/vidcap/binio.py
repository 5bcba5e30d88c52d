"""Binary file containers used across the pipeline.

All integers are little-endian. Four magics share the same building blocks:

  VFEA  feature store   : u32 count | u32 dim | str16 name | rows of
                          (str16 video id + dim float32)
  VCBK  codebook        : u32 k | u32 d | str16 channel | k*d float32
  VLMP  LM checkpoint   : u32 header len | header text | named tensor block
  VEVP  eval checkpoint : same layout as VLMP

str16 = u16 byte length + UTF-8 bytes. Named tensor block: u32 tensor count,
then per tensor str16 name | u8 itemsize (4 or 8) | u8 ndim | ndim*u32
extents | raw little-endian float data. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

FEATURE_MAGIC = b"VFEA"
CODEBOOK_MAGIC = b"VCBK"
LM_MAGIC = b"VLMP"
EVAL_MAGIC = b"VEVP"


def _write_str16(f: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"string too long for u16 length prefix ({len(raw)} bytes)")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)


def _read_exact(f: BinaryIO, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(raw)}")
    return raw


def _read_str16(f: BinaryIO) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode("utf-8")


def _check_magic(f: BinaryIO, magic: bytes) -> None:
    got = f.read(4)
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def write_feature_file(path, name: str, rows: list[tuple[str, np.ndarray]]) -> None:
    """rows: (video id, vector) pairs; vectors stored as float32."""
    dim = len(rows[0][1]) if rows else 0
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", len(rows), dim))
        _write_str16(f, name)
        for vid, vec in rows:
            arr = np.ascontiguousarray(vec, dtype="<f4")
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise FormatError(
                    f"feature row for {vid!r} has shape {arr.shape}, expected ({dim},)"
                )
            _write_str16(f, vid)
            f.write(arr.tobytes())


def read_feature_file(path) -> tuple[str, list[tuple[str, np.ndarray]]]:
    with open(path, "rb") as f:
        _check_magic(f, FEATURE_MAGIC)
        count, dim = struct.unpack("<II", _read_exact(f, 8))
        name = _read_str16(f)
        rows = []
        for _ in range(count):
            vid = _read_str16(f)
            vec = np.frombuffer(_read_exact(f, 4 * dim), dtype="<f4").copy()
            rows.append((vid, vec))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} feature rows")
    return name, rows


def write_codebook_file(path, channel: str, centroids: np.ndarray) -> None:
    arr = np.ascontiguousarray(centroids, dtype="<f4")
    if arr.ndim != 2:
        raise FormatError(f"centroids must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(CODEBOOK_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        _write_str16(f, channel)
        f.write(arr.tobytes())


def read_codebook_file(path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as f:
        _check_magic(f, CODEBOOK_MAGIC)
        k, d = struct.unpack("<II", _read_exact(f, 8))
        channel = _read_str16(f)
        data = np.frombuffer(_read_exact(f, 4 * k * d), dtype="<f4").copy()
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after codebook data")
    return channel, data.reshape(k, d)


def _write_tensor(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    if arr.dtype == np.float32:
        code, dt = 4, "<f4"
    elif arr.dtype == np.float64:
        code, dt = 8, "<f8"
    else:
        raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=dt)
    _write_str16(f, name)
    f.write(struct.pack("<BB", code, arr.ndim))
    for ext in arr.shape:
        f.write(struct.pack("<I", ext))
    f.write(arr.tobytes())


def _read_tensor(f: BinaryIO) -> tuple[str, np.ndarray]:
    name = _read_str16(f)
    code, ndim = struct.unpack("<BB", _read_exact(f, 2))
    if code not in (4, 8):
        raise FormatError(f"tensor {name!r}: bad itemsize code {code}")
    shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    dt = "<f4" if code == 4 else "<f8"
    data = np.frombuffer(_read_exact(f, code * n), dtype=dt).copy()
    return name, data.reshape(shape)


def write_checkpoint(path, magic: bytes, header: dict[str, str], tensors: dict[str, np.ndarray]) -> None:
    """Config header as sorted key=value lines, then all tensors (sorted by name)."""
    if magic not in (LM_MAGIC, EVAL_MAGIC):
        raise FormatError(f"unknown checkpoint magic {magic!r}")
    text = "".join(f"{k}={header[k]}\n" for k in sorted(header)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            _write_tensor(f, name, tensors[name])


def read_checkpoint(path, magic: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        _check_magic(f, magic)
        (hlen,) = struct.unpack("<I", _read_exact(f, 4))
        header: dict[str, str] = {}
        for line in _read_exact(f, hlen).decode("utf-8").splitlines():
            if line:
                key, _, value = line.partition("=")
                header[key] = value
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(count))
        if len(tensors) != count:
            raise FormatError(f"{path}: duplicate tensor names")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} tensors")
    return header, tensors
