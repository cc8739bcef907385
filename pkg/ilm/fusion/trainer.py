"""
Phase-2 loop: next-token NLL on target positions through the frozen backbone;
only the adapter (Q-Former + projector, or the MLP) is updated.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from ..autograd import Tensor, backward
from ..dataset.schemas import SequenceExample
from ..errors import NonFiniteError, UsageError
from ..evaluation import dev_ndcg
from ..nn import Adafactor, cross_entropy_nll, linear_decay
from ..public.schemas import EvalConfig, LossRecord, Phase2Config
from ..utils.formatting_id import ItemIndexer
from .model import FusedModel

logger = logging.getLogger("ilm.fusion")


class DevRecord(BaseModel):
    step: int
    ndcg_at_10: float


@dataclass
class PhaseTwoResult:
    best_step: int = -1
    best_ndcg: Optional[float] = None
    losses: List[LossRecord] = field(default_factory=list)
    dev: List[DevRecord] = field(default_factory=list)


def phase2_step(model: FusedModel, batch: Sequence[SequenceExample]) -> Tensor:
    logits, targets, loss_mask, _ = model.batch_logits(batch)
    loss = cross_entropy_nll(logits, targets, ignore_mask=~loss_mask)
    if not math.isfinite(loss.item()):
        logger.error(f"Phase 2: non-finite loss on tasks {[ex.task for ex in batch]}")
        raise NonFiniteError("phase2_loss")
    return loss


def sample_batch(pools: Dict[str, List[SequenceExample]], batch_size: int,
                 rng: np.random.Generator) -> List[SequenceExample]:
    """Each example picks a task uniformly, then an example of that task uniformly."""
    tasks = sorted(task for task, examples in pools.items() if examples)
    if not tasks:
        raise UsageError("phase 2 has no training examples")
    batch = []
    for _ in range(batch_size):
        task = tasks[int(rng.integers(len(tasks)))]
        examples = pools[task]
        batch.append(examples[int(rng.integers(len(examples)))])
    return batch


def phase2_train(model: FusedModel, pools: Dict[str, List[SequenceExample]], dev_examples: Sequence[SequenceExample],
                 indexer: ItemIndexer, config: Phase2Config, eval_config: EvalConfig, rng: np.random.Generator,
                 show_progress: bool = False) -> PhaseTwoResult:
    """Trains the adapter in place and leaves it at the best dev NDCG@10 state."""
    result = PhaseTwoResult()
    params = model.trainable_parameters()
    if not params:
        logger.info(f"Adapter '{model.adapter_kind}' has no trainable parameters; phase 2 skipped")
        return result

    optimizer = Adafactor(params)
    best_state = None

    def select(step: int) -> None:
        nonlocal best_state
        if not dev_examples:
            return
        score = dev_ndcg(model, dev_examples, indexer, eval_config.beam_size, eval_config.max_new_tokens,
                         eval_config.workers)
        result.dev.append(DevRecord(step=step, ndcg_at_10=score))
        logger.info(f"Phase 2 step {step}: dev ndcg@10={score:.4f}")
        if result.best_ndcg is None or score > result.best_ndcg:
            result.best_ndcg, result.best_step = score, step
            best_state = dict(model.adapter.state_dict())

    for step in tqdm(range(config.steps), desc=f"phase2 {model.adapter_kind}", disable=not show_progress):
        loss = phase2_step(model, sample_batch(pools, config.batch_size, rng))
        grads = backward(loss, params)
        optimizer.step(grads, linear_decay(config.learning_rate, step, config.steps, config.warmup_steps))
        result.losses.append(LossRecord(step=step, loss="nll", value=loss.item()))
        if (step + 1) % config.eval_every == 0 or step + 1 == config.steps:
            select(step + 1)

    if best_state is not None:
        model.adapter.load_state_dict(best_state)
        logger.info(f"Phase 2 kept step {result.best_step} (dev ndcg@10={result.best_ndcg:.4f})")
    else:
        result.best_step = config.steps
    model.verify_frozen()
    return result
