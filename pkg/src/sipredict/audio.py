"""Waveform handling: WAV ingestion, STFT/ISTFT, log-mel features, resampling.

All model-facing audio is mono or stereo float at 16 kHz. The STFT uses a
periodic Hann window with 50% overlap so overlap-add reconstruction is exact
up to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import ContractError, DimensionError, FormatError
from .tensor import Tensor

CANONICAL_RATE = 16000
STFT_WIN = 512
STFT_HOP = 256


@dataclass
class Waveform:
    """Float samples in [-1, 1]; shape (n,) mono or (n, 2) stereo."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim not in (1, 2) or (self.samples.ndim == 2 and self.samples.shape[1] != 2):
            raise DimensionError(f"waveform must be (n,) or (n, 2), got {self.samples.shape}")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else 2

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> "Waveform":
        if self.channels == 1:
            if index != 0:
                raise DimensionError(f"mono waveform has no channel {index}")
            return self
        return Waveform(self.samples[:, index].copy(), self.sample_rate)


def read_wav(path) -> Waveform:
    """16-bit PCM or 32-bit float WAV, mono or stereo."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype} (need int16 or float32)")
    if samples.ndim == 2 and samples.shape[1] > 2:
        raise FormatError(f"{path}: {samples.shape[1]} channels, only mono/stereo supported")
    return Waveform(samples, int(rate))


def write_wav(path, w: Waveform, pcm16: bool = False) -> None:
    if pcm16:
        clipped = np.clip(w.samples, -1.0, 1.0)
        wavfile.write(path, w.sample_rate, np.round(clipped * 32767.0).astype(np.int16))
    else:
        wavfile.write(path, w.sample_rate, w.samples.astype(np.float32))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase rational-factor resampling utility for offline preprocessing."""
    if target_rate <= 0:
        raise ContractError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    g = gcd(target_rate, w.sample_rate)
    out = resample_poly(w.samples, target_rate // g, w.sample_rate // g, axis=0)
    return Waveform(out, target_rate)


def _window() -> np.ndarray:
    return get_window("hann", STFT_WIN, fftbins=True)


def stft(w: Waveform, win: int = STFT_WIN, hop: int = STFT_HOP) -> np.ndarray:
    """Centered STFT with reflect padding: complex array [frames x (win/2+1)]."""
    if w.channels != 1:
        raise ContractError("stft takes a mono waveform; split channels first")
    x = w.samples
    if x.shape[0] < win:
        raise ContractError(f"signal of {x.shape[0]} samples is shorter than one {win}-sample window")
    pad = win // 2
    x = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (x.shape[0] - win) // hop
    window = get_window("hann", win, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def istft(spec: np.ndarray, length: int, win: int = STFT_WIN, hop: int = STFT_HOP,
          sample_rate: int = CANONICAL_RATE) -> Waveform:
    """Weighted overlap-add inverse; trims the analysis padding back off."""
    if spec.ndim != 2 or spec.shape[1] != win // 2 + 1:
        raise DimensionError(f"spectrogram must be frames x {win // 2 + 1}, got {spec.shape}")
    window = get_window("hann", win, fftbins=True)
    frames = np.fft.irfft(spec, n=win, axis=1)
    total = (spec.shape[0] - 1) * hop + win
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(spec.shape[0]):
        lo = i * hop
        out[lo : lo + win] += frames[i] * window
        norm[lo : lo + win] += window * window
    # frames at the edges are only partially covered; eps keeps those finite
    out /= np.maximum(norm, 1e-12)
    pad = win // 2
    out = out[pad : pad + length]
    if out.shape[0] < length:
        raise ContractError(f"spectrogram too short to reconstruct {length} samples")
    return Waveform(out, sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 40, win: int = STFT_WIN, sample_rate: int = CANONICAL_RATE,
                   f_min: float = 0.0, f_max: float = 8000.0) -> np.ndarray:
    """Triangular mel filters over rfft bins, rows normalized to unit peak."""
    if n_mels < 1:
        raise ContractError(f"n_mels must be positive, got {n_mels}")
    if f_max > sample_rate / 2:
        raise ContractError(f"f_max {f_max} above Nyquist {sample_rate / 2}")
    n_bins = win // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / win
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_hz - lo) / (center - lo)
        down = (hi - bin_hz) / (hi - center)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def logmel_extract(w: Waveform, n_mels: int = 40) -> Tensor:
    """log(mel-filtered power + 1e-10), one row per STFT frame."""
    if w.sample_rate != CANONICAL_RATE:
        raise ContractError(
            f"log-mel features need {CANONICAL_RATE} Hz audio, got {w.sample_rate} Hz; resample offline"
        )
    power = np.abs(stft(w)) ** 2
    energies = power @ mel_filterbank(n_mels).T
    return Tensor(np.log(energies + 1e-10))
