"""
The generative-retrieval backbone: a causal decoder over the shared
vocabulary (words, specials and atomic item/user id tokens).
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Tensor, no_grad
from ..dataset.schemas import SequenceExample
from ..dataset.vocab import Vocabulary
from ..errors import DimensionError, UsageError
from ..nn import (
    Module,
    TransformerDecoder,
    decoder_forward,
    load_module,
    log_probabilities,
    save_module,
    state_checksum,
)
from ..public.schemas import BackboneConfig
from ..services.file_handler import Checkpoint

logger = logging.getLogger("ilm.backbone")

CHECKPOINT_PREFIX = "backbone."


@dataclass
class TokenBatch:
    """Teacher-forced decoder batch; `loss_mask` is True where a target token is predicted."""

    input_ids: np.ndarray
    valid: np.ndarray
    targets: np.ndarray
    loss_mask: np.ndarray


def fit_prompt(prompt_ids: Sequence[int], extra: int, max_len: int) -> Tuple[List[int], int]:
    """
    Left-truncate the prompt (keeping its first token, BOS) so that
    prompt + `extra` positions fit in `max_len`. Returns (prompt, dropped).
    """
    prompt = list(prompt_ids)
    budget = max_len - extra
    if budget < 2:
        raise DimensionError(f"max length {max_len} leaves no room for a prompt of {extra} extra positions")
    if len(prompt) <= budget:
        return prompt, 0
    dropped = len(prompt) - budget
    return prompt[:1] + prompt[1 + dropped:], dropped


def teacher_forcing_batch(examples: Sequence[SequenceExample], vocab: Vocabulary, max_len: int) -> TokenBatch:
    """
    Decoder input is prompt + target[:-1]; position p predicts token p+1, and
    only positions predicting target tokens carry loss.
    """
    if not examples:
        raise UsageError("cannot build a decoder batch from no examples")
    rows, labels, spans = [], [], []
    truncated = 0
    for example in examples:
        if not example.target_ids:
            raise UsageError("sequence example has an empty target")
        prompt, dropped = fit_prompt(example.prompt_ids, len(example.target_ids) - 1, max_len)
        truncated += dropped > 0
        sequence = prompt + list(example.target_ids)
        rows.append(sequence[:-1])
        labels.append(sequence[1:])
        spans.append((len(prompt) - 1, len(sequence) - 1))
    if truncated:
        logger.warning(f"Truncated {truncated} prompt(s) from the left to fit max length {max_len}")
    length = max(len(r) for r in rows)
    input_ids = np.full((len(rows), length), vocab.pad_id, dtype=np.int64)
    targets = np.full((len(rows), length), vocab.pad_id, dtype=np.int64)
    valid = np.zeros((len(rows), length), dtype=bool)
    loss_mask = np.zeros((len(rows), length), dtype=bool)
    for b, (row, label, (start, end)) in enumerate(zip(rows, labels, spans)):
        input_ids[b, :len(row)] = row
        targets[b, :len(label)] = label
        valid[b, :len(row)] = True
        loss_mask[b, start:end] = True
    return TokenBatch(input_ids=input_ids, valid=valid, targets=targets, loss_mask=loss_mask)


class Backbone(Module):
    def __init__(self, vocab: Vocabulary, dim: int, num_layers: int, num_heads: int, max_len: int,
                 rng: np.random.Generator):
        self.decoder = TransformerDecoder(len(vocab), dim, num_layers, num_heads, max_len, rng)
        self.vocab = vocab

    @classmethod
    def from_config(cls, config: BackboneConfig, vocab: Vocabulary, rng: np.random.Generator) -> "Backbone":
        return cls(vocab, dim=config.dim, num_layers=config.num_layers, num_heads=config.num_heads,
                   max_len=config.max_len, rng=rng)

    @property
    def dim(self) -> int:
        return self.decoder.dim

    @property
    def max_len(self) -> int:
        return self.decoder.max_len

    def forward(self, token_ids, valid: Optional[np.ndarray] = None) -> Tensor:
        return decoder_forward(self.decoder, token_ids, valid=valid)

    def embed_tokens(self, token_ids) -> Tensor:
        return self.decoder.embed_tokens(token_ids)

    def logits(self, token_ids) -> np.ndarray:
        """Graph-free logits (L, V) for one token sequence."""
        with no_grad():
            return decoder_forward(self.decoder, np.asarray(token_ids, dtype=np.int64)).data

    def next_token_log_probs(self, prompt: Sequence[int], suffixes: Sequence[Sequence[int]]) -> np.ndarray:
        """Log-distribution of the token after prompt + suffix, one row per (equal-length) suffix."""
        width = len(suffixes[0])
        head, _ = fit_prompt(prompt, width, self.max_len)
        ids = np.asarray([head + list(suffix) for suffix in suffixes], dtype=np.int64)
        with no_grad():
            logits = decoder_forward(self.decoder, ids).data[:, -1, :]
        return log_probabilities(np.asarray(logits, dtype=np.float64))

    def checksum(self) -> str:
        return state_checksum(self)

    # ==================== persistence ====================
    def save(self, path, metadata: Optional[dict] = None) -> str:
        meta = dict(metadata or {})
        meta.update({"kind": "backbone", "vocab_size": len(self.vocab), "dim": self.dim, "max_len": self.max_len})
        return save_module(self.decoder, path, meta, prefix=CHECKPOINT_PREFIX)

    @classmethod
    def load(cls, path, vocab: Vocabulary, config: BackboneConfig,
             expected_hash: Optional[str] = None) -> Tuple["Backbone", Checkpoint]:
        model = cls.from_config(config, vocab, np.random.default_rng(0))
        checkpoint = load_module(model.decoder, path, expected_hash, prefix=CHECKPOINT_PREFIX)
        return model, checkpoint
