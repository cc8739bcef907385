"""
Phase-1 objectives: item-text contrastive (itc), item-item / user-item
contrastive (iic), item-grounded text generation (itg) and item-text
matching (itm).
"""
from typing import Tuple, Union

import numpy as np

from ..autograd import NORM_EPSILON, Tensor, concat, take
from ..errors import DegenerateInputError, DimensionError, UsageError
from ..nn import binary_cross_entropy_with_logits, contrastive_loss, cross_entropy_nll
from .model import QFormer

ArrayOrTensor = Union[np.ndarray, Tensor]


def _array(x: ArrayOrTensor) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _row_norms(rows: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt((rows * rows).sum(axis=-1))
    if np.any(norms <= NORM_EPSILON):
        raise DegenerateInputError(f"zero-norm {what}")
    return norms


def query_cosines(H: ArrayOrTensor, h_cls: ArrayOrTensor) -> np.ndarray:
    """Cosine of every query output row with h_cls, shape (N,)."""
    rows, target = _array(H), _array(h_cls)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DimensionError(f"item representation must be a nonempty N x d matrix, got {rows.shape}")
    if target.shape != rows.shape[1:]:
        raise DimensionError(f"h_cls {target.shape} does not match row width {rows.shape[1]}")
    return (rows * target).sum(axis=1) / (_row_norms(rows, "query output row") * _row_norms(target, "h_cls"))


def pair_cosines(H1: ArrayOrTensor, H2: ArrayOrTensor) -> np.ndarray:
    """N1 x N2 cosine matrix between the rows of two representations."""
    a, b = _array(H1), _array(H2)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0 or b.shape[0] == 0 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"incompatible representations {a.shape} and {b.shape}")
    dots = (a[:, None, :] * b[None, :, :]).sum(axis=-1)
    return dots / (_row_norms(a, "query output row")[:, None] * _row_norms(b, "query output row")[None, :])


def select_item_rep(H: ArrayOrTensor, h_cls: ArrayOrTensor) -> Tuple[int, ArrayOrTensor]:
    """Row of H closest in cosine to h_cls; the first index wins ties."""
    index = int(np.argmax(query_cosines(H, h_cls)))
    return index, (take(H, index) if isinstance(H, Tensor) else _array(H)[index])


def select_pair_rep(H1: ArrayOrTensor, H2: ArrayOrTensor) -> Tuple[int, int, ArrayOrTensor, ArrayOrTensor]:
    """Closest pair of rows across two representations; lexicographically smallest (k, l) wins ties."""
    cosines = pair_cosines(H1, H2)
    k, l = np.unravel_index(int(np.argmax(cosines)), cosines.shape)
    k, l = int(k), int(l)
    h1 = take(H1, k) if isinstance(H1, Tensor) else _array(H1)[k]
    h2 = take(H2, l) if isinstance(H2, Tensor) else _array(H2)[l]
    return k, l, h1, h2


def itc_loss(model: QFormer, item_embeddings: np.ndarray, text_ids: np.ndarray, valid: np.ndarray) -> Tensor:
    """
    Symmetric in-batch InfoNCE between each item's selected query output and
    the CLS output of its own text, cosine logits scaled by 1/temperature.
    """
    queries = model.encode_item(item_embeddings)
    h_cls = model.cls_output(text_ids, valid)
    batch = queries.shape[0]
    selected = [select_item_rep(queries.data[b], h_cls.data[b])[0] for b in range(batch)]
    h_item = take(queries, (np.arange(batch), np.asarray(selected)))
    return contrastive_loss(h_item, h_cls, model.temperature)


def iic_loss(model: QFormer, left_embeddings: np.ndarray, right_embeddings: np.ndarray) -> Tensor:
    """Contrastive loss between two entities' closest query-output pair."""
    left = model.encode_item(left_embeddings)
    right = model.encode_item(right_embeddings)
    batch = left.shape[0]
    picks = [select_pair_rep(left.data[b], right.data[b])[:2] for b in range(batch)]
    rows = np.arange(batch)
    h_left = take(left, (rows, np.asarray([k for k, _ in picks])))
    h_right = take(right, (rows, np.asarray([l for _, l in picks])))
    return contrastive_loss(h_left, h_right, model.temperature)


def itg_loss(model: QFormer, item_embeddings: np.ndarray, input_ids: np.ndarray, target_ids: np.ndarray,
             valid: np.ndarray) -> Tensor:
    """Mean token NLL of the text given the item's query outputs as prefix."""
    if not np.asarray(valid).any():
        raise DegenerateInputError("item-grounded generation needs nonempty text")
    queries = model.encode_item(item_embeddings)
    logits = model.generation_logits(queries, input_ids, valid)
    return cross_entropy_nll(logits, target_ids, ignore_mask=~np.asarray(valid, dtype=bool))


def itm_negatives(batch: int, rng: np.random.Generator) -> np.ndarray:
    """For each row b, a text index drawn uniformly from the other rows."""
    if batch < 2:
        raise UsageError("item-text matching needs a batch of at least 2 for in-batch negatives")
    draws = rng.integers(batch - 1, size=batch)
    return draws + (draws >= np.arange(batch))


def itm_loss(model: QFormer, item_embeddings: np.ndarray, text_ids: np.ndarray, valid: np.ndarray,
             rng: np.random.Generator) -> Tensor:
    """Binary matching over B positives and B in-batch negatives."""
    batch = np.asarray(text_ids).shape[0]
    negatives = itm_negatives(batch, rng)
    queries = model.encode_item(item_embeddings)
    all_queries = concat([queries, queries], axis=0)
    all_ids = np.concatenate([text_ids, np.asarray(text_ids)[negatives]], axis=0)
    all_valid = np.concatenate([valid, np.asarray(valid)[negatives]], axis=0)
    logits = model.match_logits(all_queries, all_ids, all_valid)
    labels = np.concatenate([np.ones(batch), np.zeros(batch)])
    return binary_cross_entropy_with_logits(logits, labels)
