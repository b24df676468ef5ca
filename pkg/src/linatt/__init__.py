"""linatt: linear attention kernels, the recurrent view of causal attention,
a from-scratch differentiation tape, and a scaling benchmark harness.

Submodules are imported lazily so the CLI can pin BLAS thread counts before
numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "autodiff", "bench", "cli", "core", "errors", "featmaps", "instrument",
    "kernels", "model", "optim", "plots", "recurrent", "training",
)

__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
