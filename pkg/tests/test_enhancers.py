import numpy as np
import pytest

from sipredict.audio import Waveform, write_wav
from sipredict.enhancers import EnhancerSpec, enhance, spectral_subtract
from sipredict.errors import ConfigError, ContractError, MissingReferenceError


def gated_tone(seed=0, snr_db=0.0, sr=16000, dur=1.2, freq=440.0):
    """A tone with speech-like pauses plus white noise at a chosen overall SNR."""
    t = np.arange(int(dur * sr)) / sr
    gate = ((t >= 0.2) & (t < 0.5)) | ((t >= 0.7) & (t < 1.0))
    clean = 0.3 * np.sin(2 * np.pi * freq * t) * gate
    p_sig = np.mean(clean**2)
    noise_power = p_sig / (10.0 ** (snr_db / 10.0))
    noise = np.random.default_rng(seed).normal(scale=np.sqrt(noise_power), size=t.shape)
    return Waveform(clean, sr), Waveform(clean + noise, sr)


def snr_db(x: np.ndarray, clean: np.ndarray) -> float:
    return 10.0 * np.log10(np.sum(clean**2) / np.sum((x - clean) ** 2))


class TestSpec:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            EnhancerSpec("loudness_wizard")

    def test_file_backed_needs_some_path_source(self):
        spec = EnhancerSpec("file_backed")  # legal: path may come per call
        w = Waveform(np.zeros(100), 16000)
        with pytest.raises(ContractError, match="path"):
            enhance(spec, w, clip_id="c0")

    def test_template_only_for_file_backed(self):
        with pytest.raises(ConfigError):
            EnhancerSpec("identity", path_template="{clip_id}.wav")

    def test_bad_floor(self):
        with pytest.raises(ConfigError):
            EnhancerSpec("spectral_subtraction", noise_floor=1.5)


class TestIdentity:
    def test_returns_input_unchanged(self):
        w = Waveform(np.random.default_rng(0).uniform(-1, 1, 4000))
        assert enhance(EnhancerSpec("identity"), w) is w


class TestOracleClean:
    def test_returns_reference(self):
        clean, noisy = gated_tone()
        out = enhance(EnhancerSpec("oracle_clean"), noisy, clean=clean)
        np.testing.assert_array_equal(out.samples, clean.samples)

    def test_missing_reference(self):
        _, noisy = gated_tone()
        with pytest.raises(MissingReferenceError):
            enhance(EnhancerSpec("oracle_clean"), noisy)

    def test_length_mismatch_rejected(self):
        clean, noisy = gated_tone()
        short = Waveform(clean.samples[:-100], clean.sample_rate)
        with pytest.raises(ContractError, match="length"):
            enhance(EnhancerSpec("oracle_clean"), noisy, clean=short)


class TestSpectralSubtraction:
    def test_improves_snr_by_over_3db(self):
        clean, noisy = gated_tone(seed=1, snr_db=0.0)
        out = enhance(EnhancerSpec("spectral_subtraction"), noisy)
        gain = snr_db(out.samples, clean.samples) - snr_db(noisy.samples, clean.samples)
        assert gain > 3.0, f"only {gain:.2f} dB better"

    def test_clean_input_passes_nearly_unchanged(self):
        clean, _ = gated_tone(seed=2)
        out = spectral_subtract(clean)
        r = np.corrcoef(out.samples, clean.samples)[0, 1]
        assert r > 0.9

    def test_preserves_length_mono_and_stereo(self):
        _, noisy = gated_tone(seed=3)
        assert spectral_subtract(noisy).n_samples == noisy.n_samples
        stereo = Waveform(np.stack([noisy.samples, noisy.samples[::-1]], axis=1))
        out = spectral_subtract(stereo)
        assert out.samples.shape == stereo.samples.shape

    def test_stereo_channels_processed_independently(self):
        _, a = gated_tone(seed=4)
        _, b = gated_tone(seed=5, freq=880.0)
        stereo = Waveform(np.stack([a.samples, b.samples], axis=1))
        out = spectral_subtract(stereo)
        np.testing.assert_allclose(out.samples[:, 0], spectral_subtract(a).samples, atol=1e-12)
        np.testing.assert_allclose(out.samples[:, 1], spectral_subtract(b).samples, atol=1e-12)


class TestFileBacked:
    def test_loads_template_path(self, tmp_path):
        clean, noisy = gated_tone(seed=6)
        write_wav(tmp_path / "clip42.wav", clean)
        spec = EnhancerSpec("file_backed", path_template=str(tmp_path / "{clip_id}.wav"))
        out = enhance(spec, noisy, clip_id="clip42")
        np.testing.assert_allclose(out.samples, clean.samples, atol=1e-7)

    def test_explicit_path_wins(self, tmp_path):
        clean, noisy = gated_tone(seed=7)
        write_wav(tmp_path / "direct.wav", clean)
        spec = EnhancerSpec("file_backed", path_template="/nowhere/{clip_id}.wav")
        out = enhance(spec, noisy, enhanced_path=tmp_path / "direct.wav")
        assert out.n_samples == noisy.n_samples

    def test_missing_file(self, tmp_path):
        _, noisy = gated_tone(seed=8)
        spec = EnhancerSpec("file_backed", path_template=str(tmp_path / "{clip_id}.wav"))
        with pytest.raises(OSError):
            enhance(spec, noisy, clip_id="absent")

    def test_needs_clip_id_or_path(self):
        _, noisy = gated_tone(seed=9)
        spec = EnhancerSpec("file_backed", path_template="x/{clip_id}.wav")
        with pytest.raises(ContractError):
            enhance(spec, noisy)

    def test_rate_mismatch_rejected(self, tmp_path):
        clean, noisy = gated_tone(seed=10)
        write_wav(tmp_path / "c.wav", Waveform(clean.samples, 8000))
        spec = EnhancerSpec("file_backed", path_template=str(tmp_path / "c.wav"))
        with pytest.raises(ContractError, match="Hz"):
            enhance(spec, noisy, clip_id="c")
