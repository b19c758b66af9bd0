"""Writer (and self-check reader) for the SIFB feature-file layout.

All little-endian:
  bytes 0-3   magic "SIFB"
  bytes 4-7   u32 format version (1)
  bytes 8-11  u32 dtype code (0 = 32-bit float)
  bytes 12-15 u32 number of dims, 2 or 3
  then        u64 per dim
  then        row-major float32 payload

Implemented here from the layout description, independently of any consumer,
so that cross-reading catches formatting drift on either side.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import SifbFormatError

MAGIC = b"SIFB"
VERSION = 1
DTYPE_FLOAT32 = 0


def sifb_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim not in (2, 3):
        raise SifbFormatError(f"SIFB holds 2-D or 3-D arrays, got shape {arr.shape}")
    if any(d <= 0 for d in arr.shape):
        raise SifbFormatError(f"SIFB dims must be positive, got shape {arr.shape}")
    head = MAGIC + struct.pack("<III", VERSION, DTYPE_FLOAT32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def write_sifb(path, arr: np.ndarray) -> None:
    """Atomic write: the file appears complete or not at all."""
    path = Path(path)
    blob = sifb_bytes(arr)
    tmp = path.with_name(f"{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def read_sifb(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise SifbFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise SifbFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, n_dims = struct.unpack_from("<III", raw, 4)
    if version != VERSION:
        raise SifbFormatError(f"{path}: unsupported version {version}")
    if dtype_code != DTYPE_FLOAT32:
        raise SifbFormatError(f"{path}: unsupported dtype code {dtype_code}")
    if n_dims not in (2, 3):
        raise SifbFormatError(f"{path}: n_dims must be 2 or 3, got {n_dims}")
    offset = 16 + 8 * n_dims
    if len(raw) < offset:
        raise SifbFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{n_dims}Q", raw, 16)
    if any(d == 0 for d in dims):
        raise SifbFormatError(f"{path}: zero extent in dims {dims}")
    expect = int(np.prod(dims)) * 4
    payload = raw[offset:]
    if len(payload) != expect:
        raise SifbFormatError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} require {expect}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims)
