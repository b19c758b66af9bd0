"""Shared test utilities, independent of the library's own gradient checker."""

from __future__ import annotations

import numpy as np

from sipredict.data import Clip, Manifest
from sipredict.featfile import write_feature_file
from sipredict.tensor import Tensor


def write_sweep_fixture(tmp_path, n_clips=24, n_layers=4, signal_layer=2, frames=6, dim=4):
    """Feature files where exactly one layer correlates with the score."""
    rng = np.random.default_rng(42)
    clips = []
    for i in range(n_clips):
        v = float(rng.uniform(-1.0, 1.0))
        arr = rng.normal(0.0, 1.0, size=(n_layers, frames, dim)).astype(np.float32)
        arr[signal_layer] = v + rng.normal(0.0, 0.05, size=(frames, dim)).astype(np.float32)
        cid = f"s{i:03d}"
        write_feature_file(tmp_path / f"{cid}.sifb", arr)
        clips.append(
            Clip(
                clip_id=cid,
                listener_id=f"L{i % 3}",
                audiogram=(0,) * 6,
                score=50.0 + 45.0 * v,
                wav=None,
                features={"L": f"{cid}.sifb"},
            )
        )
    return Manifest("sweep", clips, root=tmp_path)


def numeric_grad(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar tensor function, element by element.

    Kept deliberately separate from sipredict.tensor.gradient_check so the two
    can cross-check each other.
    """
    out = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(x).data.reshape(()))
        flat[i] = orig - h
        down = float(f(x).data.reshape(()))
        flat[i] = orig
        out.reshape(-1)[i] = (up - down) / (2.0 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
