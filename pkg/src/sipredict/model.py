"""The intelligibility predictor: projection, temporal stage with cross and
binaural attention, audiogram fusion, layer stage, and the sigmoid score head.

The model runs one clip at a time on 2-D tensors. Stereo inputs carry one
feature stream per ear and pathway (noisy / enhanced); both ears share
parameters by default, which makes the predicted score exactly symmetric
under an ear swap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .blocks import LinearLayer, TransformerBlock, positional_encode
from .errors import ConfigError, ContractError, DimensionError, EmptyPoolError
from .tensor import Tensor

EARS = ("L", "R")
_OTHER = {"L": "R", "R": "L"}

# distinct streams drawn from one model seed
_INIT_TAG = 101


@dataclass
class ModelConfig:
    d_model: int = 384
    downsample_factor: int = 20
    audiogram_dim: int = 6
    sfm_feature_dim: int = 128
    sfm_layer_index: int = 18
    n_heads: int = 4
    n_blocks_temporal: int = 1
    n_blocks_layer: int = 1
    ff_mult: int = 4
    dropout: float = 0.1
    positions_enabled: bool = True
    share_ear_parameters: bool = True
    share_pathway_parameters: bool = False
    cross_both_directions: bool = False
    score_scale: float = 100.0

    def validate(self) -> None:
        if self.d_model <= 0 or self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} must be positive and divisible by n_heads {self.n_heads}")
        if self.downsample_factor < 1:
            raise ConfigError(f"downsample_factor must be >= 1, got {self.downsample_factor}")
        if self.audiogram_dim < 1 or self.sfm_feature_dim < 1:
            raise ConfigError("audiogram_dim and sfm_feature_dim must be positive")
        if self.n_blocks_temporal < 1 or self.n_blocks_layer < 1:
            raise ConfigError("need at least one block per stage")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.score_scale <= 0:
            raise ConfigError("score_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class BinauralInput:
    """Per-clip model input: one noisy and one enhanced feature stream per ear.

    Masks mark valid frames (True = real). Audiogram is 6 dB-HL values, or a
    1x6 Tensor when gradients w.r.t. it are wanted.
    """

    noisy_l: Tensor
    enhanced_l: Tensor
    noisy_r: Tensor
    enhanced_r: Tensor
    audiogram: object
    mask_l: np.ndarray | None = None
    mask_r: np.ndarray | None = None

    def __post_init__(self):
        if self.mask_l is None:
            self.mask_l = np.ones(self.noisy_l.shape[0], dtype=bool)
        if self.mask_r is None:
            self.mask_r = np.ones(self.noisy_r.shape[0], dtype=bool)

    def noisy(self, ear: str) -> Tensor:
        return self.noisy_l if ear == "L" else self.noisy_r

    def enhanced(self, ear: str) -> Tensor:
        return self.enhanced_l if ear == "L" else self.enhanced_r

    def mask(self, ear: str) -> np.ndarray:
        return self.mask_l if ear == "L" else self.mask_r

    def swap_ears(self) -> "BinauralInput":
        return BinauralInput(
            noisy_l=self.noisy_r,
            enhanced_l=self.enhanced_r,
            noisy_r=self.noisy_l,
            enhanced_r=self.enhanced_l,
            audiogram=self.audiogram,
            mask_l=self.mask_r,
            mask_r=self.mask_l,
        )

    @classmethod
    def from_monaural(cls, noisy: Tensor, enhanced: Tensor, audiogram, mask=None) -> "BinauralInput":
        # single-channel convenience: the one stream feeds both ears
        return cls(noisy, enhanced, noisy, enhanced, audiogram, mask, mask)

    def validate(self) -> None:
        for ear in EARS:
            n, e, m = self.noisy(ear), self.enhanced(ear), self.mask(ear)
            if n.shape[0] != e.shape[0]:
                raise DimensionError(
                    f"ear {ear}: noisy length {n.shape[0]} != enhanced length {e.shape[0]}"
                )
            if n.shape[1] != e.shape[1]:
                raise DimensionError(f"ear {ear}: pathway feature dims differ: {n.shape} vs {e.shape}")
            if np.asarray(m).shape != (n.shape[0],):
                raise DimensionError(f"ear {ear}: mask shape {np.asarray(m).shape} != {n.shape[0]} frames")


class PredictorModel:
    """Fig-style two-stage attention predictor with a sigmoid x scale head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng((self.seed, _INIT_TAG))
        cfg = config
        d, h, ff, drop = cfg.d_model, cfg.n_heads, cfg.ff_mult, cfg.dropout

        self._params: dict[str, Tensor] = {}

        def reg(prefix: str, layer) -> None:
            for name, p in layer.parameters().items():
                self._params[f"{prefix}.{name}"] = p

        def block() -> TransformerBlock:
            return TransformerBlock(d, h, rng, ff_mult=ff, dropout=drop)

        self.projector = LinearLayer(cfg.sfm_feature_dim, d, rng)
        reg("proj", self.projector)
        self.audiogram_projector = LinearLayer(cfg.audiogram_dim, d, rng)
        reg("agram", self.audiogram_projector)

        self._self_noisy: dict[str, list[TransformerBlock]] = {}
        self._self_enh: dict[str, list[TransformerBlock]] = {}
        self._cross: dict[str, TransformerBlock] = {}
        self._binaural: dict[str, TransformerBlock] = {}
        self._layer_self: dict[str, list[TransformerBlock]] = {}
        self._layer_binaural: dict[str, TransformerBlock] = {}

        build_ears = ("L",) if cfg.share_ear_parameters else EARS
        for ear in build_ears:
            tag = "" if cfg.share_ear_parameters else f"{ear}."
            noisy = [block() for _ in range(cfg.n_blocks_temporal)]
            for i, b in enumerate(noisy):
                reg(f"temporal.{tag}noisy.{i}", b)
            if cfg.share_pathway_parameters:
                enh = noisy
            else:
                enh = [block() for _ in range(cfg.n_blocks_temporal)]
                for i, b in enumerate(enh):
                    reg(f"temporal.{tag}enh.{i}", b)
            cross = block()
            reg(f"temporal.{tag}cross", cross)
            binaural = block()
            reg(f"temporal.{tag}binaural", binaural)
            layer_self = [block() for _ in range(cfg.n_blocks_layer)]
            for i, b in enumerate(layer_self):
                reg(f"layer.{tag}self.{i}", b)
            layer_binaural = block()
            reg(f"layer.{tag}binaural", layer_binaural)

            ears_served = EARS if cfg.share_ear_parameters else (ear,)
            for e in ears_served:
                self._self_noisy[e] = noisy
                self._self_enh[e] = enh
                self._cross[e] = cross
                self._binaural[e] = binaural
                self._layer_self[e] = layer_self
                self._layer_binaural[e] = layer_binaural

        self.head = LinearLayer(d, 1, rng)
        # small head init keeps the sigmoid away from saturation at the start
        self.head.weight.data *= 0.1
        reg("head", self.head)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    # -- forward stages ----------------------------------------------------

    def pool_frames(self, features: Tensor) -> Tensor:
        """Mean over consecutive windows of `downsample_factor` frames.

        The final window may be shorter and is averaged over its actual length.
        """
        t = features.shape[0]
        if t == 0:
            raise EmptyPoolError("cannot pool an empty feature sequence")
        k = self.config.downsample_factor
        n_out = math.ceil(t / k)
        pool = np.zeros((n_out, t))
        for i in range(n_out):
            lo, hi = i * k, min((i + 1) * k, t)
            pool[i, lo:hi] = 1.0 / (hi - lo)
        return T.matmul(Tensor(pool, dtype=features.data.dtype), features)

    def pooled_mask(self, mask: np.ndarray) -> np.ndarray:
        """A pooled frame stays valid iff any source frame in its window is valid."""
        mask = np.asarray(mask, dtype=bool)
        k = self.config.downsample_factor
        n_out = math.ceil(mask.shape[0] / k)
        return np.array([mask[i * k : (i + 1) * k].any() for i in range(n_out)])

    def project_features(self, features: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
        if features.data.ndim != 2 or features.shape[1] != self.config.sfm_feature_dim:
            raise DimensionError(
                f"expected t x {self.config.sfm_feature_dim} features, got {features.shape}"
            )
        if mask is None:
            mask = np.ones(features.shape[0], dtype=bool)
        return self.projector(self.pool_frames(features)), self.pooled_mask(mask)

    def _temporal_pathway(self, inp: BinauralInput, ear: str, rng) -> tuple[Tensor, np.ndarray]:
        x_n, m = self.project_features(inp.noisy(ear), inp.mask(ear))
        x_e, _ = self.project_features(inp.enhanced(ear), inp.mask(ear))
        x_n = positional_encode(x_n, self.config.positions_enabled)
        x_e = positional_encode(x_e, self.config.positions_enabled)
        for b in self._self_noisy[ear]:
            x_n = b(x_n, key_mask=m, rng=rng)
        for b in self._self_enh[ear]:
            x_e = b(x_e, key_mask=m, rng=rng)
        h = self._cross[ear](x_n, x_e, key_mask=m, rng=rng)
        if self.config.cross_both_directions:
            rev = self._cross[ear](x_e, x_n, key_mask=m, rng=rng)
            h = T.scale(T.add(h, rev), 0.5)
        return h, m

    def temporal_forward(self, inp: BinauralInput, ear: str, rng=None) -> Tensor:
        """Per-ear temporal stage output, pooled to 1 x d_model."""
        inp.validate()
        h, m = self._temporal_pathway(inp, ear, rng)
        h_other, m_other = self._temporal_pathway(inp, _OTHER[ear], rng)
        b = self._binaural[ear](h, h_other, key_mask=m_other, rng=rng)
        return T.masked_mean(b, m)

    def fuse_audiogram(self, summary: Tensor, audiogram) -> Tensor:
        if isinstance(audiogram, Tensor):
            a = audiogram
        else:
            arr = np.asarray(audiogram, dtype=np.float64).reshape(1, -1)
            a = Tensor(arr, dtype=summary.data.dtype)
        if a.shape != (1, self.config.audiogram_dim):
            raise ContractError(
                f"audiogram must have {self.config.audiogram_dim} values, got shape {a.shape}"
            )
        if summary.shape != (1, self.config.d_model):
            raise DimensionError(f"summary must be 1 x {self.config.d_model}, got {summary.shape}")
        return T.concat([summary, self.audiogram_projector(a)], axis=0)

    def layer_forward(self, z_l: Tensor, z_r: Tensor, rng=None) -> tuple[Tensor, Tensor]:
        expected = (2, self.config.d_model)
        if z_l.shape != expected or z_r.shape != expected:
            raise DimensionError(f"layer stage expects {expected} per ear, got {z_l.shape} / {z_r.shape}")
        s = {"L": z_l, "R": z_r}
        for ear in EARS:
            x = s[ear]
            for b in self._layer_self[ear]:
                x = b(x, rng=rng)
            s[ear] = x
        token_mask = np.ones(2, dtype=bool)
        out = {}
        for ear in EARS:
            b = self._layer_binaural[ear](s[ear], s[_OTHER[ear]], rng=rng)
            out[ear] = T.masked_mean(b, token_mask)
        return out["L"], out["R"]

    def predict_tensor(self, inp: BinauralInput, rng=None) -> Tensor:
        """Full pipeline with the autodiff graph attached; 1x1 score tensor."""
        inp.validate()
        paths = {ear: self._temporal_pathway(inp, ear, rng) for ear in EARS}
        fused = {}
        for ear in EARS:
            h, m = paths[ear]
            h_other, m_other = paths[_OTHER[ear]]
            b = self._binaural[ear](h, h_other, key_mask=m_other, rng=rng)
            fused[ear] = self.fuse_audiogram(T.masked_mean(b, m), inp.audiogram)
        r_l, r_r = self.layer_forward(fused["L"], fused["R"], rng=rng)
        logit = self.head(T.scale(T.add(r_l, r_r), 0.5))
        return T.scale(T.sigmoid(logit), self.config.score_scale)

    def predict(self, inp: BinauralInput) -> float:
        with T.no_grad():
            return self.predict_tensor(inp).item()
