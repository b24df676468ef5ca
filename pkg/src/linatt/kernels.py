"""Attention kernels: softmax reference, linearized attention, and the
constant-memory causal forward/backward pair.

Softmax attention materializes the full N x N weight matrix and therefore costs
O(N^2) time and scratch memory.  Linear attention replaces the exponential
similarity with phi(q) . phi(k) for a nonnegative feature map phi, which lets the
key/value summary be accumulated once and reused for every query:

    out_i = phi(q_i)^T S / (phi(q_i) . z + eps),   S = sum_j phi(k_j) v_j^T,
                                                   z = sum_j phi(k_j).

With causal masking the sums run over j <= i only, so S and z become running
accumulators updated in place along the sequence: one C x M matrix and one
C-vector of scratch regardless of N.  The backward pass for the numerator
re-accumulates the same summaries (forward for the query gradient, backward for
the key/value gradients) instead of storing per-step snapshots, keeping the
auxiliary memory of both passes constant in sequence length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation
from .featmaps import FeatureMap, feature_map
from .instrument import aux_empty, aux_zeros

# Added to every attention normalizer before division. elu1 keeps normalizers
# positive but they can be tiny when queries and keys are strongly negative.
EPSILON = 1e-6

# Stand-in for -inf when masking logits: keeps arithmetic finite while still
# underflowing to exactly zero probability after the rowwise max subtraction.
MASK_VALUE = -1e30


@dataclass
class AttentionBatch:
    """A (Q, K, V) triple plus masking and feature-map selection.

    Q and K are N x D, V is N x M.  ``fmap`` is only consulted by the linear
    paths; the softmax path ignores it.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    causal: bool = False
    fmap: Optional[FeatureMap] = None

    def __post_init__(self):
        if self.q.ndim != 2 or self.k.ndim != 2 or self.v.ndim != 2:
            raise ContractViolation("AttentionBatch fields must be matrices")
        if self.q.shape[1] != self.k.shape[1]:
            raise ContractViolation(
                f"Q and K feature dims disagree: {self.q.shape} vs {self.k.shape}"
            )
        if not (self.q.shape[0] == self.k.shape[0] == self.v.shape[0]):
            raise ContractViolation(
                "Q, K, V must share sequence length, got "
                f"{self.q.shape[0]}, {self.k.shape[0]}, {self.v.shape[0]}"
            )
        if self.fmap is not None:
            self.fmap = feature_map(self.fmap)


@dataclass
class CausalIntermediate:
    """Result of the causal linear forward pass.

    ``numerator`` holds the unnormalized outputs, ``normalizer`` the per-position
    denominators (before the epsilon guard).  The feature-mapped inputs may be
    retained for a subsequent backward call.
    """

    numerator: np.ndarray
    normalizer: np.ndarray
    qf: Optional[np.ndarray] = None
    kf: Optional[np.ndarray] = None


def _check_2d(name: str, arr: np.ndarray) -> None:
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got ndim={arr.ndim}")


def softmax_attention(batch: AttentionBatch) -> np.ndarray:
    """Reference softmax attention: softmax(Q K^T / sqrt(D)) V.

    With ``causal=True`` the logits above the diagonal are replaced by a large
    negative constant before the softmax, so position i attends to j <= i only.
    """
    q, k, v = batch.q, batch.k, batch.v
    n, d = q.shape
    scores = aux_empty((n, n), q.dtype)
    np.matmul(q, k.T, out=scores)
    scores *= 1.0 / np.sqrt(d)
    if batch.causal:
        scores[np.triu_indices(n, k=1)] = MASK_VALUE
    # softmax in place on the scratch buffer
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    return scores @ v


def softmax_attention_backward(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, g: np.ndarray, causal: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of softmax attention w.r.t. (Q, K, V) given upstream ``g``.

    Recomputes the weight matrix, then applies the standard softmax Jacobian.
    Scratch memory is O(N^2), which is exactly what the scaling benchmark is
    meant to expose.
    """
    n, d = q.shape
    scale = 1.0 / np.sqrt(d)
    attn = aux_empty((n, n), q.dtype)
    np.matmul(q, k.T, out=attn)
    attn *= scale
    if causal:
        attn[np.triu_indices(n, k=1)] = MASK_VALUE
    attn -= attn.max(axis=1, keepdims=True)
    np.exp(attn, out=attn)
    attn /= attn.sum(axis=1, keepdims=True)

    dv = attn.T @ g
    dattn = aux_empty((n, n), q.dtype)
    np.matmul(g, v.T, out=dattn)
    # softmax backward: dS = (dA - rowsum(dA * A)) * A
    dattn -= np.einsum("ij,ij->i", dattn, attn)[:, None]
    dattn *= attn
    dq = (dattn @ k) * scale
    dk = (dattn.T @ q) * scale
    return dq, dk, dv


def linear_forward(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Non-causal linear attention numerator and normalizer from mapped features.

    Computes the key/value summary S = Kf^T V and key sum z = sum_j Kf_j once,
    then reuses them for every query:  numerator = Qf S,  normalizer = Qf z.
    """
    _check_2d("qf", qf), _check_2d("kf", kf), _check_2d("v", v)
    if qf.shape[1] != kf.shape[1] or kf.shape[0] != v.shape[0]:
        raise ContractViolation(
            f"shapes disagree: qf {qf.shape}, kf {kf.shape}, v {v.shape}"
        )
    c, m = qf.shape[1], v.shape[1]
    summary = aux_empty((c, m), qf.dtype)
    np.matmul(kf.T, v, out=summary)
    key_sum = kf.sum(axis=0)
    return qf @ summary, qf @ key_sum


def linear_backward(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the non-causal numerator Qf (Kf^T V) w.r.t. its inputs."""
    c, m = qf.shape[1], v.shape[1]
    summary = aux_empty((c, m), qf.dtype)
    np.matmul(kf.T, v, out=summary)
    dsummary = aux_empty((c, m), qf.dtype)
    np.matmul(qf.T, g, out=dsummary)
    dqf = g @ summary.T
    dkf = v @ dsummary.T
    dv = kf @ dsummary
    return dqf, dkf, dv


def causal_linear_forward(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray
) -> CausalIntermediate:
    """Causal linear attention forward pass with constant auxiliary memory.

    Inputs must already be feature-mapped (nonnegative).  The loop maintains the
    running summaries

        S_i = S_{i-1} + Kf_i V_i^T        (C x M)
        z_i = z_{i-1} + Kf_i              (C,)

    and emits numerator_i = Qf_i S_i and normalizer_i = Qf_i . z_i.  Scratch is
    one C x M accumulator, one C x M outer-product buffer and one C-vector,
    independent of sequence length.
    """
    _check_2d("qf", qf), _check_2d("kf", kf), _check_2d("v", v)
    if qf.shape != kf.shape or kf.shape[0] != v.shape[0]:
        raise ContractViolation(
            f"shapes disagree: qf {qf.shape}, kf {kf.shape}, v {v.shape}"
        )
    n, c = qf.shape
    m = v.shape[1]
    numerator = np.empty((n, m), dtype=qf.dtype)
    normalizer = np.empty(n, dtype=qf.dtype)
    s = aux_zeros((c, m), qf.dtype)
    z = aux_zeros(c, qf.dtype)
    outer = aux_empty((c, m), qf.dtype)
    for i in range(n):
        np.multiply(kf[i, :, None], v[i, None, :], out=outer)
        s += outer
        np.dot(qf[i], s, out=numerator[i])
        z += kf[i]
        normalizer[i] = qf[i] @ z
    return CausalIntermediate(numerator, normalizer, qf=qf, kf=kf)


def causal_linear_backward(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the causal numerator w.r.t. (Qf, Kf, V) given upstream ``g``.

    Two sequence loops, each with a single running C x M accumulator:

        forward  loop:  S += Kf_i V_i^T;   dQf_i = g_i S^T
        backward loop:  T += Qf_i g_i^T;   dV_i = T^T Kf_i;   dKf_i = T V_i

    No per-step summaries are stored, so auxiliary memory stays constant in N.
    """
    _check_2d("qf", qf), _check_2d("kf", kf), _check_2d("v", v), _check_2d("g", g)
    if qf.shape != kf.shape or kf.shape[0] != v.shape[0] or g.shape != v.shape:
        raise ContractViolation(
            f"shapes disagree: qf {qf.shape}, kf {kf.shape}, v {v.shape}, g {g.shape}"
        )
    n, c = qf.shape
    m = v.shape[1]
    dqf = np.empty((n, c), dtype=qf.dtype)
    dkf = np.empty((n, c), dtype=qf.dtype)
    dv = np.empty((n, m), dtype=qf.dtype)
    acc = aux_zeros((c, m), qf.dtype)
    outer = aux_empty((c, m), qf.dtype)
    for i in range(n):
        np.multiply(kf[i, :, None], v[i, None, :], out=outer)
        acc += outer
        np.dot(acc, g[i], out=dqf[i])
    acc.fill(0.0)
    for i in range(n - 1, -1, -1):
        np.multiply(qf[i, :, None], g[i, None, :], out=outer)
        acc += outer
        np.dot(acc.T, kf[i], out=dv[i])
        np.dot(acc, v[i], out=dkf[i])
    return dqf, dkf, dv


def linear_attention(batch: AttentionBatch) -> np.ndarray:
    """Non-causal linear attention over a batch with a selected feature map."""
    if batch.causal:
        raise ContractViolation("linear_attention expects causal=False")
    if batch.fmap is None:
        raise ContractViolation("linear_attention requires a feature map")
    qf = batch.fmap(batch.q)
    kf = batch.fmap(batch.k)
    numerator, normalizer = linear_forward(qf, kf, batch.v)
    return numerator / (normalizer + EPSILON)[:, None]


def causal_linear_attention(batch: AttentionBatch) -> np.ndarray:
    """Causal linear attention over a batch with a selected feature map."""
    if not batch.causal:
        raise ContractViolation("causal_linear_attention expects causal=True")
    if batch.fmap is None:
        raise ContractViolation("causal_linear_attention requires a feature map")
    qf = batch.fmap(batch.q)
    kf = batch.fmap(batch.k)
    inter = causal_linear_forward(qf, kf, batch.v)
    return inter.numerator / (inter.normalizer + EPSILON)[:, None]


# ---------------------------------------------------------------------------
# Stacked variants used by the transformer model: leading axis enumerates
# independent lanes (batch x heads), trailing axes are as above.
# ---------------------------------------------------------------------------


def causal_linear_forward_stacked(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized causal forward over G independent (N, C)/(N, M) lanes."""
    if qf.ndim != 3 or qf.shape != kf.shape or v.shape[:2] != qf.shape[:2]:
        raise ContractViolation(
            f"stacked shapes disagree: qf {qf.shape}, kf {kf.shape}, v {v.shape}"
        )
    lanes, n, c = qf.shape
    m = v.shape[2]
    numerator = np.empty((lanes, n, m), dtype=qf.dtype)
    normalizer = np.empty((lanes, n), dtype=qf.dtype)
    s = aux_zeros((lanes, c, m), qf.dtype)
    z = aux_zeros((lanes, c), qf.dtype)
    outer = aux_empty((lanes, c, m), qf.dtype)
    for i in range(n):
        np.multiply(kf[:, i, :, None], v[:, i, None, :], out=outer)
        s += outer
        np.einsum("gc,gcm->gm", qf[:, i, :], s, out=numerator[:, i, :])
        z += kf[:, i, :]
        np.einsum("gc,gc->g", qf[:, i, :], z, out=normalizer[:, i])
    return numerator, normalizer


def causal_linear_backward_stacked(
    qf: np.ndarray, kf: np.ndarray, v: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized causal numerator backward over G independent lanes."""
    if qf.ndim != 3 or qf.shape != kf.shape or g.shape != v.shape:
        raise ContractViolation(
            f"stacked shapes disagree: qf {qf.shape}, kf {kf.shape}, "
            f"v {v.shape}, g {g.shape}"
        )
    lanes, n, c = qf.shape
    m = v.shape[2]
    dqf = np.empty((lanes, n, c), dtype=qf.dtype)
    dkf = np.empty((lanes, n, c), dtype=qf.dtype)
    dv = np.empty((lanes, n, m), dtype=qf.dtype)
    acc = aux_zeros((lanes, c, m), qf.dtype)
    outer = aux_empty((lanes, c, m), qf.dtype)
    for i in range(n):
        np.multiply(kf[:, i, :, None], v[:, i, None, :], out=outer)
        acc += outer
        np.einsum("gm,gcm->gc", g[:, i, :], acc, out=dqf[:, i, :])
    acc.fill(0.0)
    for i in range(n - 1, -1, -1):
        np.multiply(qf[:, i, :, None], g[:, i, None, :], out=outer)
        acc += outer
        np.einsum("gcm,gc->gm", acc, kf[:, i, :], out=dv[:, i, :])
        np.einsum("gcm,gm->gc", acc, v[:, i, :], out=dkf[:, i, :])
    return dqf, dkf, dv
