"""Pluggable speech enhancers feeding the model's enhanced pathway.

Desk-scale stand-ins for heavyweight neural enhancers: identity (no-op
baseline), oracle_clean (intrusive upper bound for ablations),
spectral_subtraction (classic magnitude-domain recipe), and file_backed
(pre-enhanced audio from disk). All kinds preserve the sample count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform, istft, read_wav, stft
from .errors import ConfigError, ContractError, MissingReferenceError

KINDS = ("identity", "oracle_clean", "spectral_subtraction", "file_backed")


@dataclass(frozen=True)
class EnhancerSpec:
    kind: str
    noise_floor: float = 0.02
    path_template: str | None = None  # file_backed: format string with {clip_id}

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown enhancer kind '{self.kind}', expected one of {KINDS}")
        if self.path_template is not None and self.kind != "file_backed":
            raise ConfigError(f"path_template only applies to file_backed, not {self.kind}")
        if not 0.0 <= self.noise_floor < 1.0:
            raise ConfigError(f"noise floor must be in [0, 1), got {self.noise_floor}")


def _subtract_channel(x: Waveform, beta: float) -> np.ndarray:
    spec = stft(x)
    mag = np.abs(spec)
    energy = (mag * mag).sum(axis=1)
    k = max(1, round(0.1 * energy.shape[0]))
    quiet = np.argsort(energy, kind="stable")[:k]
    noise = mag[quiet].mean(axis=0)
    cleaned = np.maximum(mag - noise, beta * noise)
    phase = np.exp(1j * np.angle(spec))
    return istft(cleaned * phase, x.n_samples, sample_rate=x.sample_rate).samples


def spectral_subtract(w: Waveform, beta: float = 0.02) -> Waveform:
    """Magnitude-domain subtraction of a noise profile estimated from the

    mean magnitude of the lowest-energy 10% of frames, floored at beta*noise,
    resynthesized with the original phase. Stereo is processed per channel."""
    if w.channels == 1:
        return Waveform(_subtract_channel(w, beta), w.sample_rate)
    out = np.stack([_subtract_channel(w.channel(i), beta) for i in range(2)], axis=1)
    return Waveform(out, w.sample_rate)


def enhance(spec: EnhancerSpec, w: Waveform, clean: Waveform | None = None,
            clip_id: str | None = None, enhanced_path=None) -> Waveform:
    if spec.kind == "identity":
        return w
    if spec.kind == "oracle_clean":
        if clean is None:
            raise MissingReferenceError("oracle_clean enhancer needs the clip's clean reference")
        out = clean
    elif spec.kind == "spectral_subtraction":
        return spectral_subtract(w, spec.noise_floor)
    else:
        path = enhanced_path
        if path is None:
            if spec.path_template is None or clip_id is None:
                raise ContractError(
                    "file_backed enhancer needs an explicit path, or a path_template plus a clip_id"
                )
            path = spec.path_template.format(clip_id=clip_id)
        out = read_wav(path)
        if out.sample_rate != w.sample_rate:
            raise ContractError(
                f"{path}: enhanced audio at {out.sample_rate} Hz does not match input {w.sample_rate} Hz"
            )
    if out.n_samples != w.n_samples:
        raise ContractError(
            f"enhanced waveform has {out.n_samples} samples, input has {w.n_samples}; "
            "enhancers must preserve length"
        )
    return out
