"""Stateful autoregressive decoding: the RNN view of causal linear attention,
plus a key/value-cache softmax baseline and a naive full-recompute mode.

The linear recurrence carries two hidden quantities per head: the attention
memory ``S`` (C x M, accumulating phi(k) v^T) and the normalizer memory ``z``
(C, accumulating phi(k)).  One decoding step touches only these fixed-size
buffers, so the cost per emitted token does not depend on how many tokens came
before.  The key/value cache instead stores every past key and value; each step
re-runs softmax attention over the whole history, so step cost grows linearly
with position (and naive recomputation, which rebuilds attention for all
positions, grows quadratically).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .featmaps import feature_map
from .instrument import aux_empty
from .kernels import EPSILON
from .model import LAYERNORM_EPS, Transformer

GENERATE_MODES = ("linear-rnn", "kv-cache", "naive-recompute")


@dataclass
class RecurrentState:
    """Hidden state of one linear-attention head: memory S, normalizer z, step t."""

    s: np.ndarray
    z: np.ndarray
    t: int = 0

    def nbytes(self) -> int:
        return self.s.nbytes + self.z.nbytes


def init_state(c: int, m: int, dtype=np.float64) -> RecurrentState:
    """Zeroed recurrent state for feature dim ``c`` and value dim ``m``."""
    if c <= 0 or m <= 0:
        raise ContractViolation(f"state dims must be positive, got ({c}, {m})")
    return RecurrentState(np.zeros((c, m), dtype=dtype), np.zeros(c, dtype=dtype), 0)


def linear_step(
    state: RecurrentState, q: np.ndarray, k: np.ndarray, v: np.ndarray, fmap,
    eps: float = EPSILON,
) -> tuple[np.ndarray, RecurrentState]:
    """One decoding step of linear attention.

    Updates the state in place (a state belongs to a single sequential session):

        S += phi(k) v^T,   z += phi(k),   y = phi(q)^T S / (phi(q) . z + eps)

    Returns the attended output and the advanced state.
    """
    fmap = feature_map(fmap)
    phi_q = fmap(np.asarray(q))
    phi_k = fmap(np.asarray(k))
    v = np.asarray(v)
    if phi_q.shape != (state.s.shape[0],) or phi_k.shape != phi_q.shape:
        raise ContractViolation(
            f"feature dim mismatch: state C={state.s.shape[0]}, "
            f"phi(q) {phi_q.shape}, phi(k) {phi_k.shape}"
        )
    if v.shape != (state.s.shape[1],):
        raise ContractViolation(
            f"value dim mismatch: state M={state.s.shape[1]}, v {v.shape}"
        )
    outer = aux_empty(state.s.shape, state.s.dtype)
    np.multiply(phi_k[:, None], v[None, :], out=outer)
    state.s += outer
    state.z += phi_k
    y = (phi_q @ state.s) / (phi_q @ state.z + eps)
    state.t += 1
    return y, state


class KvCache:
    """Growable store of past keys and values for stateful softmax decoding."""

    def __init__(self, key_dim: int, value_dim: int, dtype=np.float64, capacity: int = 64):
        self._keys = np.empty((capacity, key_dim), dtype=dtype)
        self._values = np.empty((capacity, value_dim), dtype=dtype)
        self.length = 0

    def __len__(self) -> int:
        return self.length

    @property
    def keys(self) -> np.ndarray:
        return self._keys[: self.length]

    @property
    def values(self) -> np.ndarray:
        return self._values[: self.length]

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if k.shape != (self._keys.shape[1],) or v.shape != (self._values.shape[1],):
            raise ContractViolation(
                f"cache expects key dim {self._keys.shape[1]} and value dim "
                f"{self._values.shape[1]}, got {k.shape} and {v.shape}"
            )
        if self.length == self._keys.shape[0]:
            self._keys = np.concatenate([self._keys, np.empty_like(self._keys)])
            self._values = np.concatenate([self._values, np.empty_like(self._values)])
        self._keys[self.length] = k
        self._values[self.length] = v
        self.length += 1

    def truncate(self, length: int) -> None:
        """Roll back to an earlier position (used by the latency harness)."""
        if not 0 <= length <= self.length:
            raise ContractViolation(f"cannot truncate cache of {self.length} to {length}")
        self.length = length


def kv_cache_step(
    cache: KvCache, q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, KvCache]:
    """One softmax decoding step: append (k, v), attend over the whole cache.

    Cost is proportional to the number of cached entries.
    """
    cache.append(np.asarray(k), np.asarray(v))
    keys, values = cache.keys, cache.values
    scores = aux_empty(len(cache), keys.dtype)
    np.matmul(keys, np.asarray(q), out=scores)
    scores /= np.sqrt(keys.shape[1])
    scores -= scores.max()
    np.exp(scores, out=scores)
    scores /= scores.sum()
    return scores @ values, cache


# ---------------------------------------------------------------------------
# Token-level generation over a Transformer.
# ---------------------------------------------------------------------------


def _ln_np(x: np.ndarray, gain, bias) -> np.ndarray:
    mu = x.mean()
    centered = x - mu
    var = (centered * centered).mean()
    out = centered * (1.0 / np.sqrt(var + LAYERNORM_EPS))
    if gain is not None:
        out = out * gain.data + bias.data
    return out


class _StepwiseDecoder:
    """Per-token forward pass mirroring Transformer.forward exactly, backed by
    a per-layer, per-head recurrent state (linear) or key/value cache (softmax)."""

    def __init__(self, model: Transformer, mode: str):
        self.model = model
        self.mode = mode
        cfg = model.config
        self.fmap_name = "elu1" if cfg.attention == "linear-elu1" else "poly2"
        if mode == "linear-rnn":
            fm = feature_map(self.fmap_name)
            c = fm.output_dim(cfg.head_dim)
            self.states = [
                [init_state(c, cfg.value_dim) for _ in range(cfg.heads)]
                for _ in range(cfg.layers)
            ]
        else:
            self.caches = [
                [KvCache(cfg.head_dim, cfg.value_dim) for _ in range(cfg.heads)]
                for _ in range(cfg.layers)
            ]

    def step(self, token: int, position: int) -> np.ndarray:
        """Feed one token, return the logits for the next position."""
        model, cfg = self.model, self.model.config
        x = model.embedding.data[token] * np.sqrt(cfg.model_dim) + model.positional[position]
        for li, layer in enumerate(model.layers):
            h = _ln_np(x, layer.ln1_gain, layer.ln1_bias) if cfg.layernorm else x
            q_all = h @ layer.w_q.data
            k_all = h @ layer.w_k.data
            v_all = h @ layer.w_v.data
            head_outs = np.empty(cfg.heads * cfg.value_dim)
            for hd in range(cfg.heads):
                qs = slice(hd * cfg.head_dim, (hd + 1) * cfg.head_dim)
                vs = slice(hd * cfg.value_dim, (hd + 1) * cfg.value_dim)
                if self.mode == "linear-rnn":
                    y, _ = linear_step(
                        self.states[li][hd], q_all[qs], k_all[qs], v_all[vs],
                        self.fmap_name,
                    )
                else:
                    y, _ = kv_cache_step(
                        self.caches[li][hd], q_all[qs], k_all[qs], v_all[vs]
                    )
                head_outs[vs] = y
            u = x + head_outs @ layer.w_o.data
            hu = _ln_np(u, layer.ln2_gain, layer.ln2_bias) if cfg.layernorm else u
            x = np.maximum(hu @ layer.ffn_w1.data + layer.ffn_b1.data, 0.0) \
                @ layer.ffn_w2.data + layer.ffn_b2.data
        if model.final_gain is not None:
            x = _ln_np(x, model.final_gain, model.final_bias)
        return x @ model.w_out.data + model.b_out.data


def generate(model: Transformer, prefix, steps: int, mode: str = "linear-rnn") -> list[int]:
    """Greedy autoregressive continuation of ``prefix`` by ``steps`` tokens.

    All modes produce the same token sequence for a compatible model; they
    differ only in per-step cost.  ``linear-rnn`` requires a linear-attention
    model and ``kv-cache`` a softmax one; ``naive-recompute`` works for both by
    re-running the full parallel forward pass at every step.
    """
    cfg = model.config
    tokens = [int(t) for t in prefix]
    if any(t < 0 or t >= cfg.vocab_size for t in tokens):
        raise ContractViolation(f"prefix token out of range [0, {cfg.vocab_size})")
    if steps < 0:
        raise ContractViolation("steps must be >= 0")
    if mode not in GENERATE_MODES:
        raise ContractViolation(f"unknown mode {mode!r}, expected {GENERATE_MODES}")
    if steps == 0:
        return tokens
    if len(tokens) + steps > cfg.max_len:
        raise ContractViolation(
            f"prefix ({len(tokens)}) + steps ({steps}) exceeds max_len {cfg.max_len}"
        )
    if mode == "linear-rnn" and not cfg.attention.startswith("linear"):
        raise ContractViolation("linear-rnn decoding requires a linear-attention model")
    if mode == "kv-cache" and cfg.attention != "softmax":
        raise ContractViolation("kv-cache decoding requires a softmax model")
    if not tokens:
        raise ContractViolation("generate requires a non-empty prefix")

    if mode == "naive-recompute":
        for _ in range(steps):
            logits = model.forward(np.asarray([tokens]), causal=True)
            tokens.append(int(np.argmax(logits.data[0, -1])))
        return tokens

    decoder = _StepwiseDecoder(model, mode)
    logits = None
    for pos, tok in enumerate(tokens):
        logits = decoder.step(tok, pos)
    for i in range(steps):
        nxt = int(np.argmax(logits))
        tokens.append(nxt)
        if i + 1 < steps:
            logits = decoder.step(nxt, len(tokens) - 1)
    return tokens
