from typing import List, Optional

import numpy as np

from ..autograd import Tensor, reshape
from ..errors import DimensionError, UsageError
from .modules import LayerNorm, Linear, Module, TokenEmbeddingTable, TransformerBlock, combine_masks


class TransformerDecoder(Module):
    """
    Causal pre-norm transformer decoder. Runs either on token ids or on a
    pre-assembled embedding sequence (positions are added after assembly).
    """

    def __init__(self, vocab_size: int, dim: int, num_layers: int, num_heads: int, max_len: int,
                 rng: np.random.Generator):
        self.embeddings = TokenEmbeddingTable(vocab_size, dim, max_len, rng)
        self.blocks: List[TransformerBlock] = [TransformerBlock(dim, num_heads, rng) for _ in range(num_layers)]
        self.final_norm = LayerNorm(dim)
        self.lm_head = Linear(dim, vocab_size, rng)
        self.vocab_size = vocab_size
        self.dim = dim
        self.max_len = max_len

    def embed_tokens(self, token_ids) -> Tensor:
        return self.embeddings.embed_tokens(token_ids)

    def forward_embeddings(self, embeds: Tensor, valid: Optional[np.ndarray] = None) -> Tensor:
        """
        Args:
            embeds: (B, L, d) or (L, d) token/item rows without positions
            valid: (B, L) True for real positions under right padding

        Returns:
            logits of shape (B, L, V), or (L, V) for unbatched input
        """
        unbatched = embeds.ndim == 2
        if unbatched:
            embeds = reshape(embeds, (1,) + embeds.shape)
        batch, length, dim = embeds.shape
        if dim != self.dim:
            raise DimensionError(f"embedding width {dim} does not match model width {self.dim}")
        if length == 0:
            raise UsageError("cannot decode an empty sequence")
        if valid is None:
            valid = np.ones((batch, length), dtype=bool)
        mask = combine_masks(np.asarray(valid, dtype=bool), causal=True)

        x = self.embeddings.add_positions(embeds)
        for block in self.blocks:
            x = block(x, mask=mask)
        logits = self.lm_head(self.final_norm(x))
        if unbatched:
            logits = reshape(logits, logits.shape[1:])
        return logits

    def forward(self, token_ids, valid: Optional[np.ndarray] = None) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim not in (1, 2):
            raise DimensionError(f"token ids must be (L,) or (B, L), got {ids.shape}")
        return self.forward_embeddings(self.embed_tokens(ids), valid=valid)


def decoder_forward(state: TransformerDecoder, token_ids=None, embeddings: Optional[Tensor] = None,
                    valid: Optional[np.ndarray] = None) -> Tensor:
    """Logits L×V from token ids or from an assembled embedding sequence."""
    if (token_ids is None) == (embeddings is None):
        raise UsageError("pass exactly one of token_ids or embeddings")
    if embeddings is not None:
        return state.forward_embeddings(embeddings, valid=valid)
    return state.forward(token_ids, valid=valid)
