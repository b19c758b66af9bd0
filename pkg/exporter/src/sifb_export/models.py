"""Pluggable feature models.

A model is anything with `n_layers`, `dim`, and
`extract(samples: float64 [n], sample_rate: int) -> float32 [n_layers, frames, dim]`.

Identifiers:
  stub:identity         the waveform itself, framed (1 layer, frame length 512)
  stub:logmel           40-band log-mel energies (1 layer)
  stub:logmel:<K>       K stacked layers; layer k is the log-mel plane plus k
  pkg.module:attr       anything importable from the user's environment; the
                        attribute may be the model object or a zero-argument
                        factory returning one
"""

from __future__ import annotations

import importlib
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ModelError

FRAME = 512
HOP = 256
N_MELS = 40


@runtime_checkable
class FeatureModel(Protocol):
    n_layers: int
    dim: int

    def extract(self, samples: np.ndarray, sample_rate: int) -> np.ndarray: ...


class IdentityStub:
    """Non-overlapping frames of the raw waveform; trailing remainder dropped."""

    n_layers = 1
    dim = FRAME

    def extract(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        n_frames = samples.shape[0] // FRAME
        if n_frames == 0:
            raise ValueError(f"audio too short to frame: {samples.shape[0]} < {FRAME} samples")
        framed = samples[: n_frames * FRAME].reshape(n_frames, FRAME)
        return framed.astype(np.float32)[None, :, :]


def _mel_filters(sample_rate: int) -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    n_bins = FRAME // 2 + 1
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), N_MELS + 2))
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    bank = np.zeros((N_MELS, n_bins))
    for i in range(N_MELS):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - freqs) / max(hi - mid, 1e-9)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


class LogMelStub:
    """Windowed FFT -> mel energies -> log; layer k is the plane shifted by +k."""

    dim = N_MELS

    def __init__(self, n_layers: int = 1):
        if n_layers < 1:
            raise ModelError(f"logmel stub needs at least 1 layer, got {n_layers}")
        self.n_layers = int(n_layers)

    def extract(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape[0] < FRAME:
            raise ValueError(f"audio too short to frame: {samples.shape[0]} < {FRAME} samples")
        n_frames = 1 + (samples.shape[0] - FRAME) // HOP
        idx = np.arange(FRAME)[None, :] + HOP * np.arange(n_frames)[:, None]
        window = np.hanning(FRAME)
        spec = np.abs(np.fft.rfft(samples[idx] * window, axis=1)) ** 2
        base = np.log(spec @ _mel_filters(sample_rate).T + 1e-8).astype(np.float32)
        return np.stack([base + np.float32(k) for k in range(self.n_layers)], axis=0)


def load_model(identifier: str) -> FeatureModel:
    if identifier == "stub:identity":
        return IdentityStub()
    if identifier == "stub:logmel":
        return LogMelStub()
    if identifier.startswith("stub:logmel:"):
        tail = identifier.rsplit(":", 1)[1]
        try:
            return LogMelStub(int(tail))
        except ValueError as err:
            raise ModelError(f"bad layer count in '{identifier}'") from err
    if identifier.startswith("stub:"):
        raise ModelError(f"unknown stub '{identifier}' (try stub:identity or stub:logmel)")
    if ":" in identifier:
        mod_name, _, attr = identifier.partition(":")
        try:
            obj = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as err:
            raise ModelError(f"cannot load model '{identifier}': {err}") from err
        # a class or factory gets called; a ready model object passes through
        if isinstance(obj, type) or (callable(obj) and not isinstance(obj, FeatureModel)):
            model = obj()
        else:
            model = obj
        if not isinstance(model, FeatureModel):
            raise ModelError(
                f"'{identifier}' resolved to {type(model).__name__}, which lacks "
                "n_layers/dim/extract"
            )
        return model
    raise ModelError(
        f"model identifier '{identifier}' is neither a stub nor a module:attr path"
    )
