"""A small causal transformer stack over the attention kernels.

Each layer computes ``y = f(x + attention(x))`` where ``f`` is a position-wise
two-layer feedforward network.  Optional pre-normalization is applied before
the attention and feedforward sublayers (on by default: training is fragile
without it, and every equivalence check runs with the same setting on both
sides).  Attention comes in three kinds: exact softmax, and linear attention
with either the elu(x)+1 or the degree-2 polynomial feature map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation
from .kernels import EPSILON, MASK_VALUE

ATTENTION_KINDS = ("softmax", "linear-elu1", "linear-poly2")

LAYERNORM_EPS = 1e-5


@dataclass
class TransformerConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 64
    head_dim: Optional[int] = None
    value_dim: Optional[int] = None
    ffn_dim: Optional[int] = None
    vocab_size: int = 11
    max_len: int = 64
    attention: str = "linear-elu1"
    seed: int = 0
    layernorm: bool = True

    def __post_init__(self):
        if self.head_dim is None:
            if self.model_dim % self.heads:
                raise ContractViolation(
                    f"model_dim {self.model_dim} not divisible by heads {self.heads}"
                )
            self.head_dim = self.model_dim // self.heads
        if self.heads * self.head_dim != self.model_dim:
            raise ContractViolation(
                f"heads*head_dim must equal model_dim: {self.heads}*{self.head_dim} "
                f"!= {self.model_dim}"
            )
        if self.value_dim is None:
            self.value_dim = self.head_dim
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.model_dim
        if self.attention not in ATTENTION_KINDS:
            raise ContractViolation(
                f"unknown attention kind {self.attention!r}, expected {ATTENTION_KINDS}"
            )


@dataclass
class LayerParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gain: Optional[Tensor] = None
    ln1_bias: Optional[Tensor] = None
    ln2_gain: Optional[Tensor] = None
    ln2_bias: Optional[Tensor] = None

    def tensors(self) -> list[Tensor]:
        out = [self.w_q, self.w_k, self.w_v, self.w_o,
               self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2]
        for t in (self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias):
            if t is not None:
                out.append(t)
        return out


def sinusoidal_encoding(max_len: int, dim: int) -> np.ndarray:
    """Classic fixed sin/cos positional table, shape (max_len, dim)."""
    position = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)
    rates = np.exp(-idx * np.log(10000.0) / dim)
    table = np.zeros((max_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(position * rates)
    table[:, 1::2] = np.cos(position * rates[: dim // 2])
    return table


def _uniform_fanin(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def layer_norm(x: Tensor, gain: Optional[Tensor], bias: Optional[Tensor]) -> Tensor:
    return ad.layer_norm_lastaxis(x, gain, bias, eps=LAYERNORM_EPS)


def _split_heads(t: Tensor, heads: int, dim: int) -> Tensor:
    b, n = t.shape[0], t.shape[1]
    return ad.swapaxes(ad.reshape(t, (b, n, heads, dim)), 1, 2)


def _merge_heads(t: Tensor) -> Tensor:
    b, h, n, m = t.shape
    return ad.reshape(ad.swapaxes(t, 1, 2), (b, n, h * m))


def _feature_map(t: Tensor, kind: str) -> Tensor:
    if kind == "linear-elu1":
        return ad.elu1_map(t)
    # degree-2 polynomial map as a flattened outer product
    b, h, n, d = t.shape
    left = ad.reshape(t, (b, h, n, d, 1))
    right = ad.reshape(t, (b, h, n, 1, d))
    return ad.reshape(left * right, (b, h, n, d * d))


def multi_head_attention(
    params: LayerParams, x: Tensor, causal: bool, kind: str, heads: int,
    head_dim: int, value_dim: int,
) -> Tensor:
    """Project, run one attention kernel per head, concatenate, project back."""
    if kind not in ATTENTION_KINDS:
        raise ContractViolation(f"unknown attention kind {kind!r}")
    b, n = x.shape[0], x.shape[1]
    q = _split_heads(x @ params.w_q, heads, head_dim)
    k = _split_heads(x @ params.w_k, heads, head_dim)
    v = _split_heads(x @ params.w_v, heads, value_dim)

    if kind == "softmax":
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(head_dim))
        if causal:
            mask = np.triu(np.full((n, n), MASK_VALUE), k=1)
            scores = scores + mask
        out = ad.softmax_lastaxis(scores) @ v
    else:
        qf = _feature_map(q, kind)
        kf = _feature_map(k, kind)
        if causal:
            c = qf.shape[-1]
            qf2 = ad.reshape(qf, (b * heads, n, c))
            kf2 = ad.reshape(kf, (b * heads, n, c))
            v2 = ad.reshape(v, (b * heads, n, value_dim))
            numer = ad.causal_numerator(qf2, kf2, v2)
            denom = ad.tsum(qf2 * ad.cumsum_seq(kf2, axis=1), axis=-1, keepdims=True)
            out = ad.reshape(numer / (denom + EPSILON), (b, heads, n, value_dim))
        else:
            summary = ad.swapaxes(kf, -1, -2) @ v
            numer = qf @ summary
            denom = ad.tsum(qf * ad.tsum(kf, axis=2, keepdims=True), axis=-1, keepdims=True)
            out = numer / (denom + EPSILON)
    return _merge_heads(out) @ params.w_o


def transformer_layer_forward(
    params: LayerParams, x: Tensor, causal: bool, kind: str, heads: int,
    head_dim: int, value_dim: int, layernorm: bool = True,
) -> Tensor:
    """One layer: attention with residual, then the position-wise feedforward."""
    attn_in = layer_norm(x, params.ln1_gain, params.ln1_bias) if layernorm else x
    u = x + multi_head_attention(params, attn_in, causal, kind, heads, head_dim, value_dim)
    ffn_in = layer_norm(u, params.ln2_gain, params.ln2_bias) if layernorm else u
    hidden = ad.relu(ffn_in @ params.ffn_w1 + params.ffn_b1)
    return hidden @ params.ffn_w2 + params.ffn_b2


class Transformer:
    """Token-level causal transformer with selectable attention kind."""

    def __init__(self, config: TransformerConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        f = config.model_dim
        h, d, m = config.heads, config.head_dim, config.value_dim
        self.embedding = ad.parameter(rng.normal(0.0, 0.02, size=(config.vocab_size, f)))
        self.positional = sinusoidal_encoding(config.max_len, f)
        self.layers: list[LayerParams] = []
        for _ in range(config.layers):
            params = LayerParams(
                w_q=ad.parameter(_uniform_fanin(rng, f, (f, h * d))),
                w_k=ad.parameter(_uniform_fanin(rng, f, (f, h * d))),
                w_v=ad.parameter(_uniform_fanin(rng, f, (f, h * m))),
                w_o=ad.parameter(_uniform_fanin(rng, h * m, (h * m, f))),
                ffn_w1=ad.parameter(_uniform_fanin(rng, f, (f, config.ffn_dim))),
                ffn_b1=ad.parameter(np.zeros(config.ffn_dim)),
                ffn_w2=ad.parameter(_uniform_fanin(rng, config.ffn_dim, (config.ffn_dim, f))),
                ffn_b2=ad.parameter(np.zeros(f)),
            )
            if config.layernorm:
                params.ln1_gain = ad.parameter(np.ones(f))
                params.ln1_bias = ad.parameter(np.zeros(f))
                params.ln2_gain = ad.parameter(np.ones(f))
                params.ln2_bias = ad.parameter(np.zeros(f))
            self.layers.append(params)
        self.final_gain = ad.parameter(np.ones(f)) if config.layernorm else None
        self.final_bias = ad.parameter(np.zeros(f)) if config.layernorm else None
        self.w_out = ad.parameter(_uniform_fanin(rng, f, (f, config.vocab_size)))
        self.b_out = ad.parameter(np.zeros(config.vocab_size))

    def parameters(self) -> list[Tensor]:
        out = [self.embedding]
        for layer in self.layers:
            out.extend(layer.tensors())
        if self.final_gain is not None:
            out.extend([self.final_gain, self.final_bias])
        out.extend([self.w_out, self.b_out])
        return out

    def embed(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.max(initial=0) >= self.config.vocab_size or ids.min(initial=0) < 0:
            raise ContractViolation(
                f"token id out of range [0, {self.config.vocab_size})"
            )
        if ids.shape[-1] > self.config.max_len:
            raise ContractViolation(
                f"sequence length {ids.shape[-1]} exceeds max_len {self.config.max_len}"
            )
        scale = np.sqrt(self.config.model_dim)
        return ad.embedding(self.embedding, ids) * scale + self.positional[: ids.shape[-1]]

    def forward(self, ids: np.ndarray, causal: bool = True) -> Tensor:
        """Logits for a batch of token ids, shape (B, N) -> (B, N, vocab)."""
        ids = np.atleast_2d(np.asarray(ids))
        cfg = self.config
        x = self.embed(ids)
        for layer in self.layers:
            x = transformer_layer_forward(
                layer, x, causal, cfg.attention, cfg.heads, cfg.head_dim,
                cfg.value_dim, cfg.layernorm,
            )
        if self.final_gain is not None:
            x = layer_norm(x, self.final_gain, self.final_bias)
        return x @ self.w_out + self.b_out
