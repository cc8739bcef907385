"""
Querying transformer over collaborative-filtering embeddings.

A shared bank of N learnable queries runs through the query tower, attending
to itself and (cross-attention) to a single slot holding the projected CF
embedding. A separate text tower encodes [CLS] + text; it can attend to the
query outputs (matching) or take them as a causal prefix (generation).
"""
from typing import Optional, Tuple

import numpy as np

from ..autograd import Tensor, concat, reshape
from ..errors import DegenerateInputError, DimensionError
from ..nn import (
    LayerNorm,
    Linear,
    Module,
    Parameter,
    TokenEmbeddingTable,
    TransformerBlock,
    combine_masks,
    pad_token_ids,
)
from ..public.schemas import QFormerConfig

TEMPERATURE_BOUNDS = (1e-3, 10.0)


class QFormer(Module):
    def __init__(self, cf_dim: int, vocab_size: int, dim: int, num_queries: int, num_layers: int, num_heads: int,
                 max_text_len: int, rng: np.random.Generator, temperature_init: float = 0.07):
        if num_queries < 1:
            raise DimensionError("the query bank needs at least one query")
        self.query_bank = Parameter(rng.normal(0.0, 0.02, size=(num_queries, dim)))
        self.input_projection = Linear(cf_dim, dim, rng)
        self.query_layers = [TransformerBlock(dim, num_heads, rng, cross_attention=True) for _ in range(num_layers)]
        self.query_norm = LayerNorm(dim)
        self.text_embeddings = TokenEmbeddingTable(vocab_size, dim, max_text_len, rng)
        self.text_layers = [TransformerBlock(dim, num_heads, rng, cross_attention=True) for _ in range(num_layers)]
        self.text_norm = LayerNorm(dim)
        self.itm_head = Linear(dim, 1, rng)
        self.lm_head = Linear(dim, vocab_size, rng)
        self.temperature = Parameter(np.array(temperature_init))
        self.cf_dim = cf_dim
        self.dim = dim
        self.num_queries = num_queries
        self.vocab_size = vocab_size
        self.max_text_len = max_text_len

    @classmethod
    def from_config(cls, config: QFormerConfig, cf_dim: int, vocab_size: int, rng: np.random.Generator) -> "QFormer":
        return cls(cf_dim=cf_dim, vocab_size=vocab_size, dim=config.dim, num_queries=config.num_queries,
                   num_layers=config.num_layers, num_heads=config.num_heads, max_text_len=config.max_text_len,
                   rng=rng, temperature_init=config.temperature_init)

    # ==================== query tower ====================
    def encode_item(self, embeddings) -> Tensor:
        """
        Args:
            embeddings: CF embedding (d_cf,) or batch (B, d_cf)

        Returns:
            query outputs (N, d_q), or (B, N, d_q) for a batch
        """
        e = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings)
        single = e.ndim == 1
        if single:
            e = e[None, :]
        if e.ndim != 2 or e.shape[1] != self.cf_dim:
            raise DimensionError(f"expected CF embeddings of width {self.cf_dim}, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise DegenerateInputError("CF embedding contains NaN or Inf")
        batch = e.shape[0]
        context = self.input_projection(Tensor(e[:, None, :], dtype=self.query_bank.dtype))
        x = reshape(self.query_bank, (1, self.num_queries, self.dim)) + Tensor(
            np.zeros((batch, self.num_queries, self.dim), dtype=self.query_bank.dtype))
        for layer in self.query_layers:
            x = layer(x, context=context)
        x = self.query_norm(x)
        if single:
            x = reshape(x, (self.num_queries, self.dim))
        return x

    # ==================== text tower ====================
    def _check_text(self, token_ids: np.ndarray) -> None:
        if token_ids.shape[1] > self.max_text_len:
            raise DimensionError(f"text length {token_ids.shape[1]} exceeds maximum {self.max_text_len}")

    def encode_text(self, token_ids, valid: np.ndarray, queries: Optional[Tensor] = None) -> Tensor:
        """Bidirectional text tower over (B, L) ids; cross-attends to `queries` (B, N, d_q) when given."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        self._check_text(token_ids)
        x = self.text_embeddings(token_ids)
        mask = combine_masks(np.asarray(valid, dtype=bool), causal=False)
        for layer in self.text_layers:
            x = layer(x, mask=mask, context=queries)
        return self.text_norm(x)

    def cls_output(self, token_ids, valid: np.ndarray, queries: Optional[Tensor] = None) -> Tensor:
        hidden = self.encode_text(token_ids, valid, queries)
        return hidden[:, 0, :]

    def match_logits(self, queries: Tensor, token_ids, valid: np.ndarray) -> Tensor:
        """Item-text matching logit per row (B,)."""
        logits = self.itm_head(self.cls_output(token_ids, valid, queries))
        return reshape(logits, (logits.shape[0],))

    def generation_logits(self, queries: Tensor, token_ids, valid: np.ndarray) -> Tensor:
        """
        Query outputs (B, N, d_q) are a prefix to the causally-run text tower;
        returns logits (B, L, V) at the text positions.
        """
        token_ids = np.asarray(token_ids, dtype=np.int64)
        self._check_text(token_ids)
        batch = token_ids.shape[0]
        text = self.text_embeddings(token_ids)
        x = concat([queries, text], axis=1)
        prefix_valid = np.ones((batch, self.num_queries), dtype=bool)
        mask = combine_masks(np.concatenate([prefix_valid, np.asarray(valid, dtype=bool)], axis=1), causal=True)
        for layer in self.text_layers:
            x = layer(x, mask=mask)
        x = self.text_norm(x)
        return self.lm_head(x[:, self.num_queries:, :])

    # ==================== temperature ====================
    def clamp_temperature(self) -> None:
        low, high = TEMPERATURE_BOUNDS
        self.temperature.assign(np.clip(self.temperature.data, low, high))


def text_batch(token_lists, vocab, max_len: int, prefix_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """[prefix] + tokens, truncated to `max_len`, right-padded."""
    rows = [[prefix_id] + list(tokens)[:max_len - 1] for tokens in token_lists]
    return pad_token_ids(rows, vocab.pad_id)


def generation_batch(token_lists, vocab, max_len: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs [BOS] + tokens and targets tokens + [EOS]; returns (inputs, targets, valid)."""
    inputs, targets = [], []
    for tokens in token_lists:
        tokens = list(tokens)[:max_len - 1]
        if not tokens:
            raise DegenerateInputError("item-grounded generation needs nonempty text")
        inputs.append([vocab.bos_id] + tokens)
        targets.append(tokens + [vocab.eos_id])
    input_ids, valid = pad_token_ids(inputs, vocab.pad_id)
    target_ids, _ = pad_token_ids(targets, vocab.pad_id)
    return input_ids, target_ids, valid
