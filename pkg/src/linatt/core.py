"""Dense linear-algebra substrate: matrices, matmul, rowwise softmax, cumulative sums.

A matrix is a 2-D, C-contiguous (row-major) ``numpy.ndarray`` of reals.  All code
defaults to 64-bit floats; 32-bit mode exists for benchmark realism and is selected
by passing ``dtype=np.float32`` (or ``precision=32`` at the CLI).  Products are
delegated to numpy/BLAS, which is run-to-run deterministic on a fixed build and
thread count; the reproducibility tests pin exactly that property.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractViolation

Matrix = np.ndarray

DEFAULT_DTYPE = np.float64

_PRECISION_DTYPES = {64: np.float64, 32: np.float32}


def resolve_dtype(precision: int) -> np.dtype:
    """Map a precision switch (64 or 32) to the matching float dtype."""
    try:
        return np.dtype(_PRECISION_DTYPES[int(precision)])
    except (KeyError, ValueError):
        raise ContractViolation(f"precision must be 32 or 64, got {precision!r}") from None


def as_matrix(values, dtype=None) -> Matrix:
    """Coerce ``values`` to a 2-D row-major float array.

    Raises ContractViolation if the input is not interpretable as a matrix.
    """
    arr = np.ascontiguousarray(values, dtype=dtype if dtype is not None else None)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    if arr.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product ``a @ b`` with explicit dimension checking.

    Inner dimensions must agree; row-major inputs produce a row-major product.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(
            f"matmul expects 2-D operands, got ndim {a.ndim} and {b.ndim}"
        )
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}"
        )
    return a @ b


def rowwise_softmax(a: Matrix) -> Matrix:
    """Softmax applied independently to each row, with max subtraction for stability."""
    if a.ndim != 2:
        raise ContractViolation(f"rowwise_softmax expects a matrix, got ndim={a.ndim}")
    shifted = a - a.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def _check_same_shapes(seq: Sequence[Matrix], name: str) -> None:
    shapes = {m.shape for m in seq}
    if len(shapes) > 1:
        raise ContractViolation(f"{name} requires equal shapes, got {sorted(shapes)}")


def cumsum_forward(seq: Sequence[Matrix]) -> list[Matrix]:
    """Running sums from the front: out[i] = seq[0] + ... + seq[i]."""
    seq = list(seq)
    if not seq:
        return []
    _check_same_shapes(seq, "cumsum_forward")
    stacked = np.cumsum(np.stack(seq), axis=0)
    return list(stacked)


def cumsum_reverse(seq: Sequence[Matrix]) -> list[Matrix]:
    """Running sums from the back: out[i] = seq[i] + ... + seq[-1]."""
    seq = list(seq)
    if not seq:
        return []
    _check_same_shapes(seq, "cumsum_reverse")
    stacked = np.cumsum(np.stack(seq[::-1]), axis=0)[::-1]
    return list(stacked)
