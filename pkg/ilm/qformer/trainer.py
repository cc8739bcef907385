"""
Phase-1 training: item-text batches (itc + itg + itm) on even steps,
contrastive pair batches (iic) on odd steps when pair data exists. Item-text
and pair examples never share a batch.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..autograd import backward, no_grad
from ..dataset.schemas import PairExample
from ..dataset.vocab import Vocabulary
from ..errors import NonFiniteError, UsageError
from ..nn import Adafactor, cosine_decay
from ..public.schemas import EpochRecord, LossRecord, QFormerConfig
from .losses import iic_loss, itc_loss, itg_loss, itm_loss
from .model import QFormer, generation_batch, text_batch

logger = logging.getLogger("ilm.qformer")

MODE_SOURCES = {
    "IT": (),
    "IT-II": ("item-item",),
    "IT-UI": ("user-item",),
    "IT-II-UI": ("item-item", "user-item"),
}


@dataclass
class PhaseOneData:
    item_text_train: List[PairExample]
    item_text_eval: List[PairExample]
    item_item: List[PairExample]
    user_item: List[PairExample]
    item_embeddings: np.ndarray
    user_embeddings: np.ndarray
    vocab: Vocabulary


@dataclass
class PhaseOneResult:
    model: QFormer
    losses: List[LossRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)


def pair_sources(mode: str, data: PhaseOneData) -> List[Tuple[str, List[PairExample]]]:
    if mode not in MODE_SOURCES:
        raise UsageError(f"unknown phase-1 mode '{mode}'")
    available = {"item-item": data.item_item, "user-item": data.user_item}
    return [(kind, available[kind]) for kind in MODE_SOURCES[mode] if available[kind]]


def make_batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffled index batches; a trailing singleton batch is merged into its predecessor."""
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


class _PairCursor:
    """Endless shuffled batches over one pair dataset."""

    def __init__(self, pairs: Sequence[PairExample], batch_size: int, rng: np.random.Generator):
        self.pairs = pairs
        self.batch_size = batch_size
        self.rng = rng
        self._queue: List[np.ndarray] = []

    def next(self) -> List[PairExample]:
        if not self._queue:
            self._queue = make_batches(len(self.pairs), self.batch_size, self.rng)
        return [self.pairs[i] for i in self._queue.pop(0)]


def step_kinds(total_steps: int, has_pairs: bool) -> List[str]:
    """'item-text' on even steps; 'pair' on odd steps when pair data exists."""
    return ["pair" if has_pairs and step % 2 == 1 else "item-text" for step in range(total_steps)]


def _item_text_losses(model: QFormer, pairs: Sequence[PairExample], data: PhaseOneData, max_len: int,
                      rng: np.random.Generator):
    embeddings = data.item_embeddings[[p.left for p in pairs]]
    token_lists = [p.text_ids for p in pairs]
    cls_ids, cls_valid = text_batch(token_lists, data.vocab, max_len, data.vocab.cls_id)
    gen_inputs, gen_targets, gen_valid = generation_batch(token_lists, data.vocab, max_len)
    return {
        "itc": itc_loss(model, embeddings, cls_ids, cls_valid),
        "itg": itg_loss(model, embeddings, gen_inputs, gen_targets, gen_valid),
        "itm": itm_loss(model, embeddings, cls_ids, cls_valid, rng),
    }


def _pair_loss(model: QFormer, kind: str, pairs: Sequence[PairExample], data: PhaseOneData):
    left_table = data.user_embeddings if kind == "user-item" else data.item_embeddings
    left = left_table[[p.left for p in pairs]]
    right = data.item_embeddings[[p.right for p in pairs]]
    return iic_loss(model, left, right)


def mean_itg(model: QFormer, pairs: Sequence[PairExample], data: PhaseOneData, max_len: int,
             batch_size: int) -> Optional[float]:
    """Token-weighted itg loss over `pairs` without recording a graph."""
    if not pairs:
        return None
    total = 0.0
    tokens = 0
    with no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            inputs, targets, valid = generation_batch([p.text_ids for p in chunk], data.vocab, max_len)
            loss = itg_loss(model, data.item_embeddings[[p.left for p in chunk]], inputs, targets, valid)
            count = int(valid.sum())
            total += loss.item() * count
            tokens += count
    return total / tokens


def phase1_train(model: QFormer, data: PhaseOneData, config: QFormerConfig, rng: np.random.Generator,
                 show_progress: bool = False) -> PhaseOneResult:
    if not data.item_text_train:
        raise UsageError("phase 1 needs a nonempty item-text dataset")
    if len(data.item_text_train) < 2:
        raise UsageError("phase 1 needs at least 2 item-text pairs for in-batch negatives")

    sources = pair_sources(config.mode, data)
    cursors = [(kind, _PairCursor(pairs, config.batch_size, rng)) for kind, pairs in sources]
    batches_per_epoch = len(make_batches(len(data.item_text_train), config.batch_size, np.random.default_rng(0)))
    steps_per_epoch = batches_per_epoch * (2 if cursors else 1)
    total_steps = steps_per_epoch * config.epochs
    kinds = step_kinds(total_steps, bool(cursors))
    optimizer = Adafactor(model.trainable_parameters())
    params = model.trainable_parameters()
    result = PhaseOneResult(model=model)
    logger.info(f"Phase 1 ({config.mode}): {len(data.item_text_train)} item-text pairs, "
                f"pair sources={[k for k, _ in sources]}, {total_steps} steps")

    step = 0
    pair_turn = 0
    progress = tqdm(total=total_steps, desc=f"phase1 {config.mode}", disable=not show_progress)
    for epoch in range(config.epochs):
        item_batches = make_batches(len(data.item_text_train), config.batch_size, rng)
        epoch_end = step + steps_per_epoch
        while step < epoch_end:
            if kinds[step] == "item-text":
                batch = [data.item_text_train[i] for i in item_batches.pop(0)]
                parts = _item_text_losses(model, batch, data, config.max_text_len, rng)
                loss = parts["itc"] + parts["itg"] + parts["itm"]
            else:
                kind, cursor = cursors[pair_turn % len(cursors)]
                pair_turn += 1
                parts = {"iic": _pair_loss(model, kind, cursor.next(), data)}
                loss = parts["iic"]
            if not math.isfinite(loss.item()):
                logger.error(f"Phase 1 step {step}: non-finite loss {parts}")
                raise NonFiniteError("phase1_loss")
            grads = backward(loss, params)
            optimizer.step(grads, cosine_decay(config.learning_rate, step, total_steps, config.warmup_steps))
            model.clamp_temperature()
            for name, value in parts.items():
                result.losses.append(LossRecord(step=step, loss=name, value=value.item()))
            result.losses.append(LossRecord(step=step, loss="total", value=loss.item()))
            step += 1
            progress.update(1)

        train_itg = mean_itg(model, data.item_text_train, data, config.max_text_len, config.batch_size)
        eval_itg = mean_itg(model, data.item_text_eval, data, config.max_text_len, config.batch_size)
        record = EpochRecord(epoch=epoch, train_itg=train_itg, eval_itg=eval_itg,
                             gap=None if eval_itg is None else eval_itg - train_itg)
        result.epochs.append(record)
        logger.info(f"Phase 1 epoch {epoch}: train_itg={train_itg:.4f} eval_itg={eval_itg} "
                    f"temperature={model.temperature.item():.4f}")
    progress.close()
    return result


def loss_summary(records: Sequence[LossRecord]) -> Dict[str, float]:
    """Last recorded value of every loss name."""
    latest: Dict[str, float] = {}
    for record in records:
        latest[record.loss] = record.value
    return latest
