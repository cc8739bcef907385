from typing import Optional

import numpy as np

from ..autograd import Tensor, cosine_matrix, log_softmax, reshape, softplus, take
from ..errors import DegenerateInputError, DimensionError, VocabularyError


def cross_entropy_nll(logits: Tensor, targets, ignore_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean negative log-likelihood of `targets` under `logits` (..., V),
    averaged over positions whose `ignore_mask` entry is False.
    """
    vocab = logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise VocabularyError(f"target id out of range [0, {vocab})")
    keep = np.ones(targets.shape, dtype=bool) if ignore_mask is None else ~np.asarray(ignore_mask, dtype=bool)
    if not keep.any():
        raise DegenerateInputError("cross_entropy_nll: every position is masked")
    flat = reshape(log_softmax(logits, axis=-1), (-1, vocab))
    rows = np.flatnonzero(keep.reshape(-1))
    picked = take(flat, (rows, targets.reshape(-1)[rows]))
    return -picked.mean()


def log_probabilities(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax on plain arrays."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def token_nll(logits: np.ndarray, targets) -> np.ndarray:
    """Per-position NLL computed directly on arrays (no graph)."""
    log_probs = log_probabilities(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.int64)
    return -np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]


def binary_cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """mean(softplus(z) - y·z), i.e. BCE of sigmoid(z) against y."""
    labels = np.asarray(labels, dtype=logits.dtype)
    if labels.shape != logits.shape:
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    return (softplus(logits) - logits * labels).mean()


def symmetric_info_nce(similarity: Tensor, temperature) -> Tensor:
    """
    CLIP-style contrastive loss over a B×B similarity matrix whose diagonal
    holds the positive pairs: mean of row-wise and column-wise cross-entropy.
    """
    if similarity.ndim != 2 or similarity.shape[0] != similarity.shape[1]:
        raise DimensionError(f"similarity must be square, got {similarity.shape}")
    logits = similarity / temperature
    diagonal = np.arange(similarity.shape[0])
    forward = cross_entropy_nll(logits, diagonal)
    reverse = cross_entropy_nll(logits.transpose(), diagonal)
    return (forward + reverse) * 0.5


def contrastive_loss(left: Tensor, right: Tensor, temperature) -> Tensor:
    """In-batch-negative InfoNCE between paired rows of `left` and `right` (B×d)."""
    return symmetric_info_nce(cosine_matrix(left, right), temperature)
