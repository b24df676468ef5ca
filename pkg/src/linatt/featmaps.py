"""Feature maps applied rowwise to queries and keys.

A feature map must produce nonnegative outputs so that the induced similarity
score phi(q) . phi(k) is a valid (nonnegative) attention weight.  Two maps are
provided, plus a pass-through for inputs that are already feature space:

* ``elu1``:  elu(x) + 1, strictly positive, output dim C = D.
* ``poly2``: flattened outer product x (x) x, so phi(x) . phi(y) = (x . y)^2
  exactly; output dim C = D^2.
* ``identity-positive-check``: identity, but rejects negative entries.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def elu1(x: np.ndarray) -> np.ndarray:
    """elu(x) + 1 elementwise: x + 1 for x >= 0, exp(x) for x < 0."""
    return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def elu1_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of :func:`elu1`: 1 for x >= 0, exp(x) below."""
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def poly2(x: np.ndarray) -> np.ndarray:
    """Flattened outer product of each row with itself (degree-2 polynomial map)."""
    outer = x[..., :, None] * x[..., None, :]
    return outer.reshape(*x.shape[:-1], x.shape[-1] ** 2)


class FeatureMap:
    """A named map phi: R^D -> R^C with guaranteed nonnegative outputs.

    Instances are stateless; ``__call__`` applies the map along the last axis.
    """

    NAMES = ("elu1", "poly2", "identity-positive-check")

    def __init__(self, name: str):
        if name not in self.NAMES:
            raise ContractViolation(
                f"unknown feature map {name!r}, expected one of {self.NAMES}"
            )
        self.name = name

    def output_dim(self, input_dim: int) -> int:
        if self.name == "poly2":
            return input_dim * input_dim
        return input_dim

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.name == "elu1":
            return elu1(x)
        if self.name == "poly2":
            return poly2(x)
        if np.any(x < 0):
            raise ContractViolation(
                "identity-positive-check feature map requires nonnegative input"
            )
        return np.asarray(x)

    def __repr__(self) -> str:
        return f"FeatureMap({self.name!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureMap) and other.name == self.name

    def __hash__(self) -> int:
        return hash(self.name)


def feature_map(name) -> FeatureMap:
    """Coerce a name or FeatureMap instance to a FeatureMap."""
    if isinstance(name, FeatureMap):
        return name
    return FeatureMap(name)
