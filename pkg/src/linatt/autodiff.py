"""Minimal reverse-mode differentiation tape over numpy arrays.

Every operation builds a :class:`Tensor` node holding the forward value, the
parent nodes, and a closure that pushes the upstream gradient into the parents.
``backward`` walks the recorded graph once in reverse topological order.  This
is deliberately small: only the operations the transformer stack needs exist,
plus one custom rule (``causal_numerator``) whose backward re-accumulates
running summaries instead of storing per-step state, so its scratch memory does
not grow with sequence length.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractViolation
from .featmaps import elu1, elu1_grad


class Tensor:
    """A node in the differentiation graph: value, parents, backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        backward(self)


def parameter(data) -> Tensor:
    """A leaf tensor whose gradient the optimizer will consume."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)  # copy: g may be shared by siblings
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along axes that were broadcast in forward."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- elementwise ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    out = Tensor(_const(a) + _const(b), parents=[t for t in (a, b) if isinstance(t, Tensor)])

    def backward_fn(g):
        if a_t:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b_t:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward_fn = backward_fn
    return out


def mul(a, b) -> Tensor:
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    av, bv = _const(a), _const(b)
    out = Tensor(av * bv, parents=[t for t in (a, b) if isinstance(t, Tensor)])

    def backward_fn(g):
        if a_t:
            _accumulate(a, _unbroadcast(g * bv, a.data.shape))
        if b_t:
            _accumulate(b, _unbroadcast(g * av, b.data.shape))

    out._backward_fn = backward_fn
    return out


def div(a, b) -> Tensor:
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    av, bv = _const(a), _const(b)
    out_val = av / bv
    out = Tensor(out_val, parents=[t for t in (a, b) if isinstance(t, Tensor)])

    def backward_fn(g):
        if a_t:
            _accumulate(a, _unbroadcast(g / bv, a.data.shape))
        if b_t:
            _accumulate(b, _unbroadcast(-g * out_val / bv, b.data.shape))

    out._backward_fn = backward_fn
    return out


def exp(a: Tensor) -> Tensor:
    out_val = np.exp(a.data)
    out = Tensor(out_val, parents=[a])
    out._backward_fn = lambda g: _accumulate(a, g * out_val)
    return out


def sqrt(a: Tensor) -> Tensor:
    out_val = np.sqrt(a.data)
    out = Tensor(out_val, parents=[a])
    out._backward_fn = lambda g: _accumulate(a, g * (0.5 / out_val))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), parents=[a])
    out._backward_fn = lambda g: _accumulate(a, g * (a.data > 0))
    return out


def elu1_map(a: Tensor) -> Tensor:
    """Feature map elu(x)+1 as a differentiable node."""
    out = Tensor(elu1(a.data), parents=[a])
    out._backward_fn = lambda g: _accumulate(a, g * elu1_grad(a.data))
    return out


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=[a])
    out._backward_fn = lambda g: _accumulate(a, g.reshape(a.data.shape))
    return out


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(np.swapaxes(a.data, ax1, ax2), parents=[a])
    out._backward_fn = lambda g: _accumulate(a, np.swapaxes(g, ax1, ax2))
    return out


# -- reductions ----------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=[a])

    def backward_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    out._backward_fn = backward_fn
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    av, bv = _const(a), _const(b)
    out = Tensor(av @ bv, parents=[t for t in (a, b) if isinstance(t, Tensor)])

    def backward_fn(g):
        if a_t:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.data.shape))
        if b_t:
            if bv.ndim == 2 and av.ndim > 2:
                # stacked (..., n, k) @ (k, m): contract all leading axes at once
                db = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                _accumulate(b, db)
            else:
                _accumulate(b, _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.data.shape))

    out._backward_fn = backward_fn
    return out


# -- neural-net primitives -------------------------------------------------------


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; ids are a constant int array."""
    ids = np.asarray(ids)
    out = Tensor(weight.data[ids], parents=[weight])

    def backward_fn(g):
        if weight.grad is None:
            weight.grad = np.zeros_like(weight.data)
        np.add.at(weight.grad, ids, g)

    out._backward_fn = backward_fn
    return out


def softmax_lastaxis(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    out = Tensor(shifted, parents=[a])

    def backward_fn(g):
        inner = (g * shifted).sum(axis=-1, keepdims=True)
        _accumulate(a, (g - inner) * shifted)

    out._backward_fn = backward_fn
    return out


def layer_norm_lastaxis(x: Tensor, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    ``gain`` and ``bias`` may be Tensors or None.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    gain_t, bias_t = isinstance(gain, Tensor), isinstance(bias, Tensor)
    out_val = normed
    if gain is not None:
        out_val = out_val * _const(gain)
    if bias is not None:
        out_val = out_val + _const(bias)
    parents = [x] + [t for t in (gain, bias) if isinstance(t, Tensor)]
    out = Tensor(out_val, parents=parents)

    def backward_fn(g):
        if bias_t:
            _accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        if gain_t:
            _accumulate(gain, (g * normed).reshape(-1, g.shape[-1]).sum(axis=0))
        dn = g * _const(gain) if gain is not None else g
        # d/dx of (x - mu) * inv, with mu and inv functions of x
        inner = (dn * normed).mean(axis=-1, keepdims=True)
        _accumulate(x, (dn - dn.mean(axis=-1, keepdims=True) - normed * inner) * inv)

    out._backward_fn = backward_fn
    return out


def cumsum_seq(a: Tensor, axis: int) -> Tensor:
    """Cumulative sum along ``axis``; backward is the reversed cumulative sum."""
    out = Tensor(np.cumsum(a.data, axis=axis), parents=[a])

    def backward_fn(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        _accumulate(a, np.ascontiguousarray(rev))

    out._backward_fn = backward_fn
    return out


def causal_numerator(qf: Tensor, kf: Tensor, v: Tensor) -> Tensor:
    """Causal linear-attention numerator over stacked lanes (G, N, C)/(G, N, M).

    Forward and backward both run the constant-memory accumulator kernels; no
    per-step state is recorded on the tape.
    """
    numerator, _ = kernels.causal_linear_forward_stacked(qf.data, kf.data, v.data)
    out = Tensor(numerator, parents=[qf, kf, v])

    def backward_fn(g):
        dqf, dkf, dv = kernels.causal_linear_backward_stacked(
            qf.data, kf.data, v.data, np.ascontiguousarray(g)
        )
        _accumulate(qf, dqf)
        _accumulate(kf, dkf)
        _accumulate(v, dv)

    out._backward_fn = backward_fn
    return out


def cross_entropy_masked(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean token-level cross entropy over positions where ``mask`` is nonzero.

    ``targets`` (int) and ``mask`` (0/1 float) have the shape of ``logits`` minus
    the class axis.  Fused forward/backward keeps the log-sum-exp stable.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=logits.data.dtype)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    nll = logsumexp - picked
    denom = mask.sum()
    if denom <= 0:
        raise ContractViolation("cross_entropy_masked needs at least one unmasked position")
    out = Tensor(np.asarray((nll * mask).sum() / denom), parents=[logits])

    def backward_fn(g):
        probs = np.exp(shifted - logsumexp[..., None])
        flat = probs.reshape(-1, probs.shape[-1])
        flat[np.arange(flat.shape[0]), targets.ravel()] -= 1.0
        probs *= (mask / denom)[..., None]
        _accumulate(logits, probs * g)

    out._backward_fn = backward_fn
    return out


# -- the backward walk ------------------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """All nodes reachable from ``root``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from the scalar ``loss``.

    Gradients accumulate across calls; zero them between optimization steps.
    """
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward requires a scalar root, got shape {loss.data.shape}"
        )
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None
