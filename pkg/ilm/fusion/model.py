"""
Phase-2 model: the frozen backbone fed with token embeddings interleaved with
adapter rows. Every placeholder marker expands in place to the adapter's M
rows for its entity; positions are assigned over the assembled sequence.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autograd import Tensor, concat, no_grad, take
from ..backbone import Backbone
from ..dataset.prompts import to_text_only
from ..dataset.schemas import SequenceExample, Slot
from ..dataset.vocab import SPECIAL_TOKENS
from ..errors import DependencyError, DimensionError, StorageError, UsageError
from ..nn import Module, Parameter, decoder_forward, log_probabilities, save_module, stack_padded, token_nll
from ..services.file_handler import Checkpoint, read_checkpoint, write_checkpoint

logger = logging.getLogger("ilm.fusion")

ADAPTER_PREFIX = "adapter."


@dataclass
class Layout:
    """Assembly plan for one prompt: kept token ids and the slots still expanded."""

    token_ids: List[int]
    slots: List[Slot]
    dropped_slots: int = 0
    dropped_tokens: int = 0


class FusedModel(Module):
    def __init__(self, backbone: Backbone, adapter: Optional[Module], item_embeddings: np.ndarray,
                 user_embeddings: np.ndarray, backbone_hash: Optional[str] = None, adapter_kind: str = "qformer"):
        self.backbone = backbone.freeze()
        self.adapter = adapter
        self.item_embeddings = np.asarray(item_embeddings)
        self.user_embeddings = np.asarray(user_embeddings)
        self.backbone_hash = backbone_hash
        self.adapter_kind = adapter_kind
        self.backbone_checksum = backbone.checksum()

    @property
    def vocab(self):
        return self.backbone.vocab

    @property
    def num_outputs(self) -> int:
        return 0 if self.adapter is None else self.adapter.num_outputs

    def trainable_parameters(self) -> List[Parameter]:
        return [] if self.adapter is None else self.adapter.trainable_parameters()

    def prepare(self, example: SequenceExample) -> SequenceExample:
        """Without an adapter the prompt loses its placeholder markers."""
        return to_text_only(example, self.vocab) if self.adapter is None else example

    # ==================== assembly ====================
    def plan(self, example: SequenceExample, extra: int) -> Layout:
        """
        Fit prompt + `extra` continuation positions into the backbone's max
        length: drop history item slots first (earliest first), then the
        remaining slots, then tokens right after BOS.
        """
        markers = {self.vocab.item_marker_id, self.vocab.user_marker_id}
        width = self.num_outputs
        slots = sorted(example.slots, key=lambda s: s.position)
        for slot in slots:
            if example.prompt_ids[slot.position] not in markers:
                raise UsageError(f"slot at position {slot.position} does not point at a placeholder marker")
        budget = self.backbone.max_len - extra

        def length(kept: List[Slot]) -> int:
            return len(example.prompt_ids) - len(slots) + len(kept) * width

        history = [s for s in slots if s.kind == "item" and example.task == "sequential"]
        others = [s for s in slots if s not in history]
        drop_order = history + others
        kept = list(slots)
        dropped = 0
        while kept and length(kept) > budget:
            kept.remove(drop_order[dropped])
            dropped += 1

        removed = {s.position for s in slots} - {s.position for s in kept}
        token_ids, new_slots = [], []
        for position, token in enumerate(example.prompt_ids):
            if position in removed:
                continue
            slot = next((s for s in kept if s.position == position), None)
            if slot is not None:
                new_slots.append(slot.model_copy(update={"position": len(token_ids)}))
            token_ids.append(token)

        dropped_tokens = 0
        overflow = len(token_ids) - len(new_slots) + len(new_slots) * width - budget
        if overflow > 0:
            if len(token_ids) - overflow < 2:
                raise DimensionError(f"max length {self.backbone.max_len} leaves no room for the prompt")
            token_ids = token_ids[:1] + token_ids[1 + overflow:]
            dropped_tokens = overflow
        if dropped or dropped_tokens:
            logger.warning(f"Truncated prompt ({example.task}, user {example.user_id}): "
                           f"dropped {dropped} placeholder(s) and {dropped_tokens} token(s)")
        return Layout(token_ids=token_ids, slots=new_slots, dropped_slots=dropped, dropped_tokens=dropped_tokens)

    def entity_rows(self, slots: Sequence[Slot]) -> Optional[Tensor]:
        """(S, M, d_m) adapter rows for the given slots, in order."""
        if not slots:
            return None
        if self.adapter is None:
            raise UsageError("placeholders need an adapter")
        embeddings = []
        for slot in slots:
            table = self.user_embeddings if slot.kind == "user" else self.item_embeddings
            if not 0 <= slot.entity_id < len(table):
                raise DependencyError(f"{slot.kind} {slot.entity_id} has no CF embedding", stage="train-mf")
            embeddings.append(table[slot.entity_id])
        return self.adapter(np.stack(embeddings))

    def assemble_input(self, example: SequenceExample, continuation: Sequence[int] = ()) -> Tensor:
        """Embedding rows (L, d_m) for prompt + continuation tokens, without positions."""
        example = self.prepare(example)
        layout = self.plan(example, len(continuation))
        return self._assemble(layout, continuation)

    def _assemble(self, layout: Layout, continuation: Sequence[int]) -> Tensor:
        token_ids = layout.token_ids + list(continuation)
        tokens = self.backbone.embed_tokens(np.asarray(token_ids, dtype=np.int64))
        rows = self.entity_rows(layout.slots)
        if rows is None:
            return take(tokens, slice(0, len(token_ids)))
        pieces, start = [], 0
        for index, slot in enumerate(layout.slots):
            if slot.position > start:
                pieces.append(take(tokens, slice(start, slot.position)))
            pieces.append(take(rows, index))
            start = slot.position + 1
        if start < len(token_ids):
            pieces.append(take(tokens, slice(start, len(token_ids))))
        return concat(pieces, axis=0)

    # ==================== forward ====================
    def forward_text_only(self, token_ids: Sequence[int]) -> np.ndarray:
        """Logits (L, V) for a placeholder-free prompt through the fused path."""
        ids = list(token_ids)
        markers = {self.vocab.item_marker_id, self.vocab.user_marker_id}
        if markers & set(ids):
            raise UsageError("forward_text_only takes prompts without placeholders")
        example = SequenceExample(task="text", template_id="text", user_id=-1, prompt_ids=ids, target_ids=[])
        with no_grad():
            embeds = self.assemble_input(example)
            return decoder_forward(self.backbone.decoder, embeddings=embeds).data

    def batch_logits(self, examples: Sequence[SequenceExample]) -> Tuple[Tensor, np.ndarray, np.ndarray, np.ndarray]:
        """
        Teacher-forced logits over prompt + target[:-1].

        Returns:
            logits (B, L, V), targets (B, L), loss mask (B, L), valid (B, L)
        """
        if not examples:
            raise UsageError("empty phase-2 batch")
        rows, spans = [], []
        for example in examples:
            if not example.target_ids:
                raise UsageError("sequence example has an empty target")
            assembled = self.assemble_input(example, example.target_ids[:-1])
            prompt_length = assembled.shape[0] - (len(example.target_ids) - 1)
            rows.append(assembled)
            spans.append((prompt_length - 1, assembled.shape[0]))
        length = max(r.shape[0] for r in rows)
        embeds = stack_padded(rows, length)
        valid = np.zeros((len(rows), length), dtype=bool)
        targets = np.full((len(rows), length), self.vocab.pad_id, dtype=np.int64)
        loss_mask = np.zeros((len(rows), length), dtype=bool)
        for b, (example, (start, end)) in enumerate(zip(examples, spans)):
            valid[b, :end] = True
            targets[b, start:end] = example.target_ids
            loss_mask[b, start:end] = True
        logits = decoder_forward(self.backbone.decoder, embeddings=embeds, valid=valid)
        return logits, targets, loss_mask, valid

    def target_nll(self, example: SequenceExample) -> np.ndarray:
        """Per-token NLL of the example's target sequence."""
        with no_grad():
            logits, targets, loss_mask, _ = self.batch_logits([example])
        return token_nll(logits.data, targets)[loss_mask]

    def next_token_log_probs(self, prompt: SequenceExample, suffixes: Sequence[Sequence[int]]) -> np.ndarray:
        """Log-distribution of the next token after the assembled prompt + each equal-length suffix."""
        width = len(suffixes[0])
        if any(len(suffix) != width for suffix in suffixes):
            raise DimensionError("beam suffixes must share one length")
        with no_grad():
            layout = self.plan(self.prepare(prompt), width)
            embeds = [self._assemble(layout, suffix) for suffix in suffixes]
            logits = decoder_forward(self.backbone.decoder, embeddings=stack_padded(embeds, embeds[0].shape[0])).data
        return log_probabilities(np.asarray(logits[:, -1, :], dtype=np.float64))

    # ==================== frozen-backbone checks ====================
    def verify_frozen(self) -> str:
        checksum = self.backbone.checksum()
        if checksum != self.backbone_checksum:
            raise StorageError("backbone parameters changed during phase 2",
                               hint=f"expected {self.backbone_checksum[:12]}, found {checksum[:12]}")
        return checksum

    # ==================== persistence ====================
    def save_trainable(self, path, metadata: Optional[Dict] = None) -> str:
        meta = dict(metadata or {})
        meta.update({"kind": "phase2", "adapter": self.adapter_kind, "backbone_hash": self.backbone_hash,
                     "num_outputs": self.num_outputs})
        if self.adapter is None:
            return write_checkpoint(path, {}, meta)
        return save_module(self.adapter, path, meta, prefix=ADAPTER_PREFIX)

    def load_trainable(self, path, expected_hash: Optional[str] = None) -> Checkpoint:
        """Restore adapter state; the checkpoint must bind to this backbone."""
        checkpoint = read_checkpoint(path, expected_hash)
        bound = checkpoint.metadata.get("backbone_hash")
        if bound != self.backbone_hash:
            raise StorageError(f"phase-2 checkpoint {path} was trained against another backbone",
                               hint=f"bound to {str(bound)[:12]}, loaded {str(self.backbone_hash)[:12]}")
        if checkpoint.metadata.get("adapter") != self.adapter_kind:
            raise StorageError(f"phase-2 checkpoint {path} holds adapter '{checkpoint.metadata.get('adapter')}'",
                               hint=f"expected '{self.adapter_kind}'")
        if self.adapter is not None:
            state = {name[len(ADAPTER_PREFIX):]: value for name, value in checkpoint.arrays.items()
                     if name.startswith(ADAPTER_PREFIX)}
            self.adapter.load_state_dict(state)
        return checkpoint


# ==================== text-only preservation ====================
def random_text_prompts(vocab, count: int, max_len: int, rng: np.random.Generator) -> List[List[int]]:
    """BOS followed by uniformly drawn non-special tokens, lengths in [2, max_len]."""
    special = {vocab.id(token) for token in SPECIAL_TOKENS}
    pool = np.asarray([i for i in range(len(vocab)) if i not in special], dtype=np.int64)
    if len(pool) == 0:
        raise UsageError("vocabulary has no ordinary tokens")
    prompts = []
    for _ in range(count):
        length = int(rng.integers(2, max_len + 1))
        prompts.append([vocab.bos_id] + [int(t) for t in rng.choice(pool, size=length - 1)])
    return prompts


def text_only_divergence(model: FusedModel, reference: Backbone, prompts: Sequence[Sequence[int]]) -> float:
    """Max absolute logit difference between the fused path and a standalone backbone."""
    worst = 0.0
    for prompt in prompts:
        fused = model.forward_text_only(prompt)
        alone = reference.logits(prompt)
        worst = max(worst, float(np.max(np.abs(fused.astype(np.float64) - alone.astype(np.float64)))))
    return worst
