"""Frozen random feature extractor standing in for a large pretrained encoder.

A stack of seeded random affine maps with tanh nonlinearities turns log-mel
frames into layered features. Nothing here is ever trained; the whole stack is
a pure function of (waveform, seed, config), which keeps cached features and
exported feature files trustworthy.
"""

from __future__ import annotations

import numpy as np

from .audio import Waveform, logmel_extract
from .blocks import xavier_uniform
from .errors import ConfigError
from .tensor import Tensor

_SFM_TAG = 202

# fixed affine squash of log-mel values (roughly [-23, 5]) into tanh range
_LOGMEL_SHIFT = 11.5
_LOGMEL_SCALE = 6.0

DEFAULT_OUT_DIM = 128
DEFAULT_N_LAYERS = 3


def toy_sfm_extract(w: Waveform, seed: int, out_dim: int = DEFAULT_OUT_DIM,
                    n_layers: int = DEFAULT_N_LAYERS, n_mels: int = 40) -> Tensor:
    """Layered frozen features, shape [n_layers x frames x out_dim], all in (-1, 1)."""
    if out_dim <= 0:
        raise ConfigError(f"out_dim must be positive, got {out_dim}")
    if n_layers <= 0:
        raise ConfigError(f"n_layers must be positive, got {n_layers}")
    mel = logmel_extract(w, n_mels=n_mels).data.astype(np.float64)
    x = (mel + _LOGMEL_SHIFT) / _LOGMEL_SCALE

    rng = np.random.default_rng((int(seed), _SFM_TAG))
    layers = []
    d_in = x.shape[1]
    for _ in range(n_layers):
        weight = xavier_uniform(rng, d_in, out_dim)
        bias = rng.uniform(-0.1, 0.1, size=out_dim)
        x = np.tanh(x @ weight + bias)
        layers.append(x.astype(np.float32))
        d_in = out_dim
    return Tensor(np.stack(layers, axis=0))
