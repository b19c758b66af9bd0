"""Per-clip feature acquisition: waveform -> enhancer -> frozen extractor,
or precomputed feature files, with an in-memory cache.

One store serves one enhancer pathway; training with several enhancers uses
several stores over the same manifest.
"""

from __future__ import annotations

import numpy as np

from .data import Batch, Clip, Manifest, clip_waveform
from .enhancers import EnhancerSpec, enhance
from .errors import ContractError
from .featfile import read_feature_file
from .model import BinauralInput
from .sfm import DEFAULT_N_LAYERS, DEFAULT_OUT_DIM, toy_sfm_extract
from .tensor import Tensor

_EAR_CHANNEL = {"L": 0, "R": 1}


class FeatureStore:
    """Computes and caches the four per-ear feature streams for each clip."""

    def __init__(self, manifest: Manifest, enhancer: EnhancerSpec, sfm_seed: int = 0,
                 layer_index: int = DEFAULT_N_LAYERS - 1, out_dim: int = DEFAULT_OUT_DIM,
                 n_layers: int = DEFAULT_N_LAYERS, enhancer_name: str | None = None,
                 cache: bool = True):
        if layer_index < 0:
            raise ContractError(f"layer index must be nonnegative, got {layer_index}")
        self.manifest = manifest
        self.enhancer = enhancer
        self.enhancer_name = enhancer_name or enhancer.kind
        self.sfm_seed = int(sfm_seed)
        self.layer_index = int(layer_index)
        self.out_dim = int(out_dim)
        self.n_layers = int(n_layers)
        self._cache: dict[str, dict[str, np.ndarray]] | None = {} if cache else None

    def __call__(self, clip: Clip) -> dict[str, np.ndarray]:
        return self.features(clip)

    def features(self, clip: Clip) -> dict[str, np.ndarray]:
        if self._cache is not None and clip.clip_id in self._cache:
            return self._cache[clip.clip_id]
        out = self._from_files(clip) if clip.features is not None else self._from_audio(clip)
        if self._cache is not None:
            self._cache[clip.clip_id] = out
        return out

    def _from_files(self, clip: Clip) -> dict[str, np.ndarray]:
        if self.enhancer.kind != "identity":
            raise ContractError(
                f"clip {clip.clip_id} is feature-backed; only the identity enhancer "
                f"applies to precomputed features, got '{self.enhancer.kind}'"
            )
        per_ear = {}
        for ear in ("L", "R"):
            path = clip.features.get(ear) or clip.features.get("L")
            tensor = read_feature_file(self.manifest.resolve(path))
            if tensor.data.ndim == 3:
                if self.layer_index >= tensor.shape[0]:
                    raise ContractError(
                        f"layer {self.layer_index} out of range for a {tensor.shape[0]}-layer file"
                    )
                per_ear[ear] = tensor.data[self.layer_index]
            else:
                per_ear[ear] = tensor.data
        return {
            "noisy_l": per_ear["L"],
            "enhanced_l": per_ear["L"],
            "noisy_r": per_ear["R"],
            "enhanced_r": per_ear["R"],
        }

    def _extract(self, w) -> np.ndarray:
        if self.layer_index >= self.n_layers:
            raise ContractError(
                f"layer index {self.layer_index} out of range for a {self.n_layers}-layer extractor"
            )
        feats = toy_sfm_extract(w, self.sfm_seed, out_dim=self.out_dim, n_layers=self.n_layers)
        return feats.data[self.layer_index]

    def _from_audio(self, clip: Clip) -> dict[str, np.ndarray]:
        noisy = clip_waveform(self.manifest, clip, "noisy")
        clean = clip_waveform(self.manifest, clip, "clean")
        enhanced_path = None
        if self.enhancer.kind == "file_backed" and self.enhancer_name in clip.enhanced_wavs:
            enhanced_path = self.manifest.resolve(clip.enhanced_wavs[self.enhancer_name])
        enhanced = enhance(self.enhancer, noisy, clean=clean, clip_id=clip.clip_id,
                           enhanced_path=enhanced_path)
        out = {}
        for ear, ch in _EAR_CHANNEL.items():
            n_ch = noisy.channel(min(ch, noisy.channels - 1))
            out[f"noisy_{ear.lower()}"] = self._extract(n_ch)
            if enhanced is noisy:
                out[f"enhanced_{ear.lower()}"] = out[f"noisy_{ear.lower()}"]
            else:
                e_ch = enhanced.channel(min(ch, enhanced.channels - 1))
                out[f"enhanced_{ear.lower()}"] = self._extract(e_ch)
        return out


def read_feature_3d_layer(path, layer_index: int):
    """Convenience: layer slice of a 3-D feature file (validates the index)."""
    return read_feature_file(path, layer=layer_index)


def clip_input(clip: Clip, feature_fn) -> BinauralInput:
    """Model input for a single clip from any feature callable."""
    feats = feature_fn(clip)
    return BinauralInput(
        noisy_l=Tensor(feats["noisy_l"]),
        enhanced_l=Tensor(feats["enhanced_l"]),
        noisy_r=Tensor(feats["noisy_r"]),
        enhanced_r=Tensor(feats["enhanced_r"]),
        audiogram=np.asarray(clip.audiogram, dtype=np.float64),
    )


def batch_inputs(batch: Batch) -> list[tuple[BinauralInput, float]]:
    """Per-clip model inputs from a padded batch; trailing padding is trimmed."""
    out = []
    for i in range(len(batch)):
        t_l = int(batch.mask_l[i].sum())
        t_r = int(batch.mask_r[i].sum())
        inp = BinauralInput(
            noisy_l=Tensor(batch.noisy_l[i, :t_l]),
            enhanced_l=Tensor(batch.enhanced_l[i, :t_l]),
            noisy_r=Tensor(batch.noisy_r[i, :t_r]),
            enhanced_r=Tensor(batch.enhanced_r[i, :t_r]),
            audiogram=batch.audiograms[i],
        )
        out.append((inp, float(batch.scores[i])))
    return out
