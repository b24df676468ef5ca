"""Instrumented allocation of auxiliary (scratch) buffers.

Kernels allocate their scratch arrays through :func:`aux_zeros` / :func:`aux_empty`
so that a caller can measure how many auxiliary bytes a call needs, excluding its
input and output buffers.  Counters are kept on a thread-local stack, so nested
scopes and concurrent benchmark threads do not interfere.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_tls = threading.local()


def _stack() -> list:
    st = getattr(_tls, "stack", None)
    if st is None:
        st = []
        _tls.stack = st
    return st


class AuxCounter:
    """Byte counter for auxiliary allocations made while the counter is active.

    Kernels allocate every scratch buffer they need up front and reuse it across
    the sequence loop, so ``bytes_allocated`` equals the peak auxiliary footprint
    of the call.
    """

    __slots__ = ("bytes_allocated", "allocations")

    def __init__(self) -> None:
        self.bytes_allocated = 0
        self.allocations = 0

    def record(self, nbytes: int) -> None:
        self.bytes_allocated += nbytes
        self.allocations += 1


@contextmanager
def track_aux():
    """Context manager yielding an :class:`AuxCounter` active for the block."""
    counter = AuxCounter()
    _stack().append(counter)
    try:
        yield counter
    finally:
        _stack().pop()


def _record(nbytes: int) -> None:
    for counter in _stack():
        counter.record(nbytes)


def aux_zeros(shape, dtype) -> np.ndarray:
    out = np.zeros(shape, dtype=dtype)
    _record(out.nbytes)
    return out


def aux_empty(shape, dtype) -> np.ndarray:
    out = np.empty(shape, dtype=dtype)
    _record(out.nbytes)
    return out
