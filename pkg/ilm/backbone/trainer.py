"""
Generative-retrieval pretraining of the backbone on text-only prompts
(id tokens, no placeholder markers). Loss covers target tokens only.
"""
import logging
import math
from typing import Dict, List, Sequence

import numpy as np
from tqdm import tqdm

from ..autograd import Tensor, backward, no_grad
from ..dataset.prompts import RECOMMENDATION_TASKS, to_text_only
from ..dataset.schemas import SequenceExample
from ..errors import NonFiniteError, UsageError
from ..nn import Adafactor, cosine_decay, cross_entropy_nll, token_nll
from ..public.schemas import BackboneConfig, LossRecord
from .model import Backbone, teacher_forcing_batch

logger = logging.getLogger("ilm.backbone")


def pretraining_examples(train_prompts: Dict[str, List[SequenceExample]], vocab) -> List[SequenceExample]:
    """Text-only copies of every recommendation training prompt."""
    examples = []
    for task in RECOMMENDATION_TASKS:
        examples.extend(to_text_only(example, vocab) for example in train_prompts.get(task, []))
    return examples


def sequence_loss(model: Backbone, examples: Sequence[SequenceExample]) -> Tensor:
    batch = teacher_forcing_batch(examples, model.vocab, model.max_len)
    logits = model(batch.input_ids, batch.valid)
    return cross_entropy_nll(logits, batch.targets, ignore_mask=~batch.loss_mask)


def mean_target_nll(model: Backbone, examples: Sequence[SequenceExample], batch_size: int = 32) -> float:
    """Token-weighted target NLL without recording a graph."""
    if not examples:
        raise UsageError("cannot score an empty example set")
    total, tokens = 0.0, 0
    with no_grad():
        for start in range(0, len(examples), batch_size):
            batch = teacher_forcing_batch(examples[start:start + batch_size], model.vocab, model.max_len)
            nll = token_nll(model(batch.input_ids, batch.valid).data, batch.targets)
            total += float(nll[batch.loss_mask].sum())
            tokens += int(batch.loss_mask.sum())
    return total / tokens


def pretrain(model: Backbone, examples: Sequence[SequenceExample], config: BackboneConfig,
             rng: np.random.Generator, show_progress: bool = False) -> List[LossRecord]:
    if not examples:
        raise UsageError("backbone pretraining needs at least one example")
    marker_ids = {model.vocab.item_marker_id, model.vocab.user_marker_id}
    if any(example.slots or marker_ids & set(example.prompt_ids) for example in examples):
        raise UsageError("backbone pretraining examples must be text-only (no placeholder slots)")

    params = model.trainable_parameters()
    optimizer = Adafactor(params)
    records: List[LossRecord] = []
    order: List[int] = []
    logger.info(f"Pretraining backbone on {len(examples)} text-only prompts for {config.pretrain_steps} steps")
    for step in tqdm(range(config.pretrain_steps), desc="pretrain", disable=not show_progress):
        if len(order) < config.batch_size:
            order.extend(int(i) for i in rng.permutation(len(examples)))
        picked, order = order[:config.batch_size], order[config.batch_size:]
        loss = sequence_loss(model, [examples[i] for i in picked])
        if not math.isfinite(loss.item()):
            logger.error(f"Pretraining step {step}: non-finite loss")
            raise NonFiniteError("pretrain_loss")
        grads = backward(loss, params)
        optimizer.step(grads, cosine_decay(config.learning_rate, step, config.pretrain_steps, config.warmup_steps))
        records.append(LossRecord(step=step, loss="nll", value=loss.item()))
        if step % 100 == 0:
            logger.info(f"Pretraining step {step}: nll={loss.item():.4f}")
    return records
