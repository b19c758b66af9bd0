"""Binary feature-file format shared with the exporter.

Layout, all little-endian:
  bytes 0-3   magic "SIFB"
  bytes 4-7   u32 format version (1)
  bytes 8-11  u32 dtype code (0 = 32-bit float)
  bytes 12-15 u32 number of dims, 2 or 3
  then        u64 per dim — [layers, frames, dim] or [frames, dim]
  then        row-major float32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError
from .tensor import Tensor

MAGIC = b"SIFB"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0


def write_feature_file(path, features) -> None:
    arr = features.data if isinstance(features, Tensor) else np.asarray(features)
    if arr.ndim not in (2, 3):
        raise ContractError(f"feature files hold 2-D or 3-D arrays, got shape {arr.shape}")
    if any(d <= 0 for d in arr.shape):
        raise ContractError(f"feature dims must be positive, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, DTYPE_FLOAT32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_header(raw: bytes, path) -> tuple[tuple[int, ...], int]:
    """Validated (dims, payload_offset) of a feature file's bytes."""
    if len(raw) < 16:
        raise FormatError(f"{path}: header truncated at offset {len(raw)} (need 16 bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at offset 0, expected {MAGIC!r}")
    version, dtype_code, n_dims = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if dtype_code != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code} at offset 8")
    if n_dims not in (2, 3):
        raise FormatError(f"{path}: n_dims must be 2 or 3, got {n_dims} at offset 12")
    end = 16 + 8 * n_dims
    if len(raw) < end:
        raise FormatError(f"{path}: dims truncated at offset {len(raw)} (need {end} bytes)")
    dims = struct.unpack_from(f"<{n_dims}Q", raw, 16)
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero extent in dims {dims} at offset 16")
    return dims, end


def validate_feature_file(path) -> dict:
    """Check the full file; returns {'dims': ..., 'payload_bytes': ...}."""
    raw = Path(path).read_bytes()
    dims, offset = read_header(raw, path)
    expected = int(np.prod(dims)) * 4
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(
            f"{path}: payload of {actual} bytes at offset {offset} does not match "
            f"dims {dims} (need {expected} bytes)"
        )
    return {"dims": tuple(dims), "payload_bytes": expected}


def read_feature_file(path, layer: int | None = None) -> Tensor:
    """Load a feature file; optionally select one layer of a 3-D file."""
    raw = Path(path).read_bytes()
    dims, offset = read_header(raw, path)
    expected = int(np.prod(dims)) * 4
    if len(raw) - offset != expected:
        raise FormatError(
            f"{path}: payload of {len(raw) - offset} bytes at offset {offset} does not match "
            f"dims {dims} (need {expected} bytes)"
        )
    arr = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims).copy()
    if layer is None:
        return Tensor(arr)
    if len(dims) != 3:
        raise ContractError(f"{path}: layer selection needs a 3-D file, this one is {len(dims)}-D")
    if not 0 <= layer < dims[0]:
        raise ContractError(f"{path}: layer {layer} out of range for a {dims[0]}-layer file")
    return Tensor(arr[layer])
