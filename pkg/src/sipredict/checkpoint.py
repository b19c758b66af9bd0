"""Versioned model checkpoint container.

Layout: magic ``SIPC``, u32 format version, u64 header length, a UTF-8 JSON
header (model config, init seed, parameter manifest, optional metadata), then
one little-endian float32 row-major blob per parameter in manifest order.
Serialization is fully deterministic so identical models produce identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelConfig, PredictorModel

MAGIC = b"SIPC"
FORMAT_VERSION = 1


def save_model(path, model: PredictorModel, extra: dict | None = None) -> None:
    params = model.parameters()
    manifest = [{"name": name, "shape": list(p.shape)} for name, p in params.items()]
    header = {
        "config": model.config.to_dict(),
        "extra": extra or {},
        "params": manifest,
        "seed": model.seed,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name, p in params.items():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def _read_header(raw: bytes, path) -> tuple[dict, int]:
    if len(raw) < 16:
        raise FormatError(f"{path}: too short to be a checkpoint ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    end = 16 + header_len
    if len(raw) < end:
        raise FormatError(f"{path}: truncated header (need {end} bytes, have {len(raw)})")
    try:
        header = json.loads(raw[16:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    for key in ("config", "params", "seed"):
        if key not in header:
            raise FormatError(f"{path}: header missing '{key}'")
    return header, end


def read_checkpoint_info(path) -> dict:
    """Header only: config, seed, parameter manifest and any training metadata."""
    raw = Path(path).read_bytes()
    header, _ = _read_header(raw, path)
    return header


def load_model(path) -> PredictorModel:
    """Rebuild the model and validate every stored name and shape against it."""
    raw = Path(path).read_bytes()
    header, offset = _read_header(raw, path)
    config = ModelConfig.from_dict(header["config"])
    model = PredictorModel(config, seed=header["seed"])
    params = model.parameters()

    stored = {entry["name"]: tuple(entry["shape"]) for entry in header["params"]}
    missing = sorted(set(params) - set(stored))
    unexpected = sorted(set(stored) - set(params))
    if missing or unexpected:
        raise FormatError(
            f"{path}: parameter names do not match the config "
            f"(missing {missing[:3]}, unexpected {unexpected[:3]})"
        )

    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        p = params[name]
        if shape != p.shape:
            raise FormatError(f"{path}: parameter '{name}' has shape {shape}, expected {p.shape}")
        n_bytes = int(np.prod(shape)) * 4
        blob = raw[offset : offset + n_bytes]
        if len(blob) != n_bytes:
            raise FormatError(
                f"{path}: truncated payload for '{name}' at offset {offset} "
                f"(need {n_bytes} bytes, have {len(blob)})"
            )
        p.data = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        offset += n_bytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return model
