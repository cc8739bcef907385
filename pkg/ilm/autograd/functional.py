"""Composite and fused differentiable functions built on the Tensor core."""
from typing import Optional

import numpy as np

from ..errors import DegenerateInputError, DimensionError
from .tensor import Tensor, as_tensor, sqrt, tsum

NORM_EPSILON = 1e-12


def _axis_extent(x: Tensor, axis: int, op: str) -> int:
    if x.ndim == 0:
        raise DimensionError(f"{op} needs at least one axis")
    extent = x.shape[axis]
    if extent == 0:
        raise DimensionError(f"{op} over an empty axis")
    return extent


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Numerically stable softmax. `mask` (True = keep) gives masked entries a
    weight of exactly zero; a row with every entry masked is rejected.
    """
    _axis_extent(x, axis, "softmax")
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not mask.any(axis=axis).all():
            raise DegenerateInputError("softmax: a row has every position masked")
        data = np.where(mask, data, -np.inf)
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), rule, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _axis_extent(x, axis, "log_softmax")
    data = x.data
    shifted = data - data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), rule, "log_softmax")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-position normalization over the last axis (pre-affine)."""
    _axis_extent(x, -1, "layer_norm")
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    centered = data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    out = centered * inv_std

    def rule(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - out * gy_mean),)

    return Tensor._from_op(out, (x,), rule, "layer_norm")


def vector_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(tsum(x * x, axis=axis, keepdims=keepdims))


def _check_nonzero_rows(x: Tensor, op: str) -> None:
    norms = np.sqrt((x.data * x.data).sum(axis=-1))
    if (norms <= NORM_EPSILON).any():
        raise DegenerateInputError(f"{op}: zero-norm input (norm <= {NORM_EPSILON})")


def normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale vectors along the last axis to unit length."""
    _check_nonzero_rows(x, "normalize")
    return x / vector_norm(x, axis=axis, keepdims=True)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u·v / (‖u‖‖v‖) along the last axis."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"cosine_similarity: extents {u.shape[-1]} and {v.shape[-1]} differ")
    _check_nonzero_rows(u, "cosine_similarity")
    _check_nonzero_rows(v, "cosine_similarity")
    dot = tsum(u * v, axis=-1)
    return dot / (vector_norm(u) * vector_norm(v))


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows of `a` (..., n, d) and `b` (..., m, d)."""
    b_unit = normalize(b)
    axes = tuple(range(b.ndim - 2)) + (b.ndim - 1, b.ndim - 2)
    return normalize(a) @ b_unit.transpose(axes)
