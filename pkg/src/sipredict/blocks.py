"""Reusable neural layers: linear, multi-head attention, pre-norm transformer blocks.

All layers hold their parameters as Tensors and expose ``parameters()`` as an
ordered name -> Tensor mapping so trainers, checkpoints and gradient checks can
address every weight uniformly.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, EmptyPoolError
from .tensor import Tensor

# large negative additive score for masked keys; exp() underflows to exactly 0
_MASK_OFF = -1e9


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class LinearLayer:
    """Affine map x @ W + b over the trailing feature axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        dt = T.get_default_dtype()
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out), requires_grad=True, dtype=dt)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, dtype=dt)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(
                f"linear layer expects feature dim {self.weight.shape[0]}, got input {x.shape}"
            )
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class MultiHeadAttention:
    """Scaled dot-product attention with per-head projections and key masking."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = LinearLayer(d_model, d_model, rng)
        self.wk = LinearLayer(d_model, d_model, rng)
        self.wv = LinearLayer(d_model, d_model, rng)
        self.wo = LinearLayer(d_model, d_model, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        if q.shape[-1] != self.d_model or k.shape[-1] != self.d_model or v.shape[-1] != self.d_model:
            raise DimensionError(
                f"attention expects model dim {self.d_model}, got q{q.shape} k{k.shape} v{v.shape}"
            )
        if k.shape[0] != v.shape[0]:
            raise DimensionError(f"key/value lengths differ: {k.shape} vs {v.shape}")
        tk = k.shape[0]
        if key_mask is None:
            key_mask = np.ones(tk, dtype=bool)
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != (tk,):
            raise DimensionError(f"key mask shape {key_mask.shape} does not match {tk} keys")
        if not key_mask.any():
            raise EmptyPoolError("attention with every key masked")

        qp, kp, vp = self.wq(q), self.wk(k), self.wv(v)
        bias = np.where(key_mask, 0.0, _MASK_OFF)[None, :]
        inv_scale = 1.0 / math.sqrt(self.head_dim)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * self.head_dim, (h + 1) * self.head_dim
            qh = T.slice_along(qp, 1, lo, hi)
            kh = T.slice_along(kp, 1, lo, hi)
            vh = T.slice_along(vp, 1, lo, hi)
            scores = T.scale(T.matmul(qh, T.transpose(kh)), inv_scale)
            scores = T.add(scores, Tensor(np.broadcast_to(bias, scores.shape).copy(), dtype=scores.dtype))
            weights = T.softmax(scores, axis=-1)
            heads.append(T.matmul(weights, vh))
        return self.wo(T.concat(heads, axis=1))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        return out


class TransformerBlock:
    """Pre-norm residual block: q + Attn(LN(q), LN(kv)) followed by + FF(LN(.)).

    Self-attention is the kv=q case. Dropout is applied to the attention and
    feed-forward outputs only when an rng is supplied (training mode).
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, ff_mult: int = 4, dropout: float = 0.1):
        self.attention = MultiHeadAttention(d_model, n_heads, rng)
        self.ff_in = LinearLayer(d_model, ff_mult * d_model, rng)
        self.ff_out = LinearLayer(ff_mult * d_model, d_model, rng)
        dt = T.get_default_dtype()
        self.ln_attn_gain = Tensor(np.ones(d_model), requires_grad=True, dtype=dt)
        self.ln_attn_bias = Tensor(np.zeros(d_model), requires_grad=True, dtype=dt)
        self.ln_ff_gain = Tensor(np.ones(d_model), requires_grad=True, dtype=dt)
        self.ln_ff_bias = Tensor(np.zeros(d_model), requires_grad=True, dtype=dt)
        self.dropout = dropout

    def __call__(
        self,
        q: Tensor,
        kv: Tensor | None = None,
        key_mask: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        self_attn = kv is None
        qn = T.layer_norm(q, self.ln_attn_gain, self.ln_attn_bias)
        kvn = qn if self_attn else T.layer_norm(kv, self.ln_attn_gain, self.ln_attn_bias)
        attn = self.attention(qn, kvn, kvn, key_mask)
        x = T.add(q, T.dropout(attn, self.dropout, rng))
        ff = self.ff_out(T.gelu(self.ff_in(T.layer_norm(x, self.ln_ff_gain, self.ln_ff_bias))))
        return T.add(x, T.dropout(ff, self.dropout, rng))

    def parameters(self) -> dict[str, Tensor]:
        out = {f"attn.{k}": v for k, v in self.attention.parameters().items()}
        for name, layer in (("ff_in", self.ff_in), ("ff_out", self.ff_out)):
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        out["ln_attn.gain"] = self.ln_attn_gain
        out["ln_attn.bias"] = self.ln_attn_bias
        out["ln_ff.gain"] = self.ln_ff_gain
        out["ln_ff.bias"] = self.ln_ff_bias
        return out


def sinusoid_table(t: int, d: int) -> np.ndarray:
    """Standard sinusoidal position table: sin on even columns, cos on odd."""
    if d % 2 != 0:
        raise ConfigError(f"positional encoding needs an even model dim, got {d}")
    pos = np.arange(t, dtype=np.float64)[:, None]
    idx = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * idx / d)
    table = np.zeros((t, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def positional_encode(x: Tensor, enabled: bool = True) -> Tensor:
    """Add sinusoidal position encodings to a t x d sequence; identity when disabled."""
    if not enabled:
        return x
    table = sinusoid_table(x.shape[0], x.shape[1]).astype(x.data.dtype)
    return T.add(x, Tensor(table))
