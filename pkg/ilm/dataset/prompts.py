from typing import List, Sequence

import numpy as np

from ..errors import UsageError
from ..utils.formatting_id import ItemIndexer
from ..utils.template_utils import get_templates, render_template, strip_placeholders
from .schemas import Catalog, PairExample, SequenceExample, SplitExample, UserSequence
from .vocab import Vocabulary

RECOMMENDATION_TASKS = ("sequential", "straightforward")


def _pick(templates, regime: str, rng: np.random.Generator):
    if regime == "unseen" or len(templates) == 1:
        return templates[0]
    return templates[int(rng.integers(len(templates)))]


def _recommendation_example(task: str, template, user_id: int, history: Sequence[int], target: int,
                            vocab: Vocabulary, indexer: ItemIndexer, history_length: int) -> SequenceExample:
    template_id, text = template
    context = {"user": user_id}
    if task == "sequential":
        context["history"] = list(history)[-history_length:]
    body, slots = render_template(text, context, vocab, indexer)
    prompt = [vocab.bos_id] + body
    slots = [slot.model_copy(update={"position": slot.position + 1}) for slot in slots]
    return SequenceExample(
        task=task, template_id=template_id, user_id=user_id, prompt_ids=prompt, slots=slots,
        target_ids=[vocab.id(indexer.token(target)), vocab.eos_id], target_item=target,
    )


def render_prompts(examples: Sequence[SplitExample], task: str, regime: str, vocab: Vocabulary,
                   indexer: ItemIndexer, history_length: int, rng: np.random.Generator) -> List[SequenceExample]:
    """Evaluation prompts: seen picks one training template per example, unseen uses the held-out one."""
    if task not in RECOMMENDATION_TASKS:
        raise UsageError(f"'{task}' is not a recommendation task")
    templates = get_templates(task, regime)
    return [_recommendation_example(task, _pick(templates, regime, rng), ex.user_id, ex.history, ex.target,
                                    vocab, indexer, history_length)
            for ex in examples]


def render_train_prompts(train: Sequence[UserSequence], task: str, vocab: Vocabulary, indexer: ItemIndexer,
                         history_length: int, rng: np.random.Generator) -> List[SequenceExample]:
    """
    sequential: every train prefix predicts its next train item.
    straightforward: every train item of the user is a target.
    """
    if task not in RECOMMENDATION_TASKS:
        raise UsageError(f"'{task}' is not a recommendation task")
    templates = get_templates(task, "seen")
    rendered = []
    for sequence in train:
        items = sequence.items
        if task == "sequential":
            targets = [(items[:j], items[j]) for j in range(1, len(items))]
        else:
            targets = [([], item) for item in items]
        for history, target in targets:
            rendered.append(_recommendation_example(task, _pick(templates, "seen", rng), sequence.user_id, history,
                                                    target, vocab, indexer, history_length))
    return rendered


def render_description_prompts(pairs: Sequence[PairExample], regime: str, vocab: Vocabulary, indexer: ItemIndexer,
                               rng: np.random.Generator) -> List[SequenceExample]:
    """Free-text item description: prompt names the item, target is its metadata text."""
    templates = get_templates("description", regime)
    rendered = []
    for pair in pairs:
        if pair.kind != "item-text" or not pair.text:
            continue
        template_id, text = _pick(templates, regime, rng)
        body, slots = render_template(text, {"item": pair.left}, vocab, indexer)
        slots = [slot.model_copy(update={"position": slot.position + 1}) for slot in slots]
        rendered.append(SequenceExample(
            task="description", template_id=template_id, user_id=-1, prompt_ids=[vocab.bos_id] + body,
            slots=slots, target_ids=vocab.encode(pair.text) + [vocab.eos_id], target_item=pair.left,
        ))
    return rendered


def to_text_only(example: SequenceExample, vocab: Vocabulary) -> SequenceExample:
    """Drop placeholder markers; id tokens stay, so the prompt is pure text."""
    return example.model_copy(update={"prompt_ids": strip_placeholders(example.prompt_ids, vocab), "slots": []})


def leaked_targets(examples: Sequence[SequenceExample], held_out: Sequence[SplitExample]) -> List[SequenceExample]:
    """Training examples whose (user, target) equals a held-out (user, target)."""
    forbidden = {(ex.user_id, ex.target) for ex in held_out}
    return [ex for ex in examples if (ex.user_id, ex.target_item) in forbidden]


def catalog_texts(catalog: Catalog) -> List[str]:
    return [item.text for item in catalog.items if item.text]
