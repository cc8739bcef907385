from typing import List, Sequence, Tuple

import numpy as np

from .schemas import Catalog, PairExample, UserSequence
from .vocab import Vocabulary


def build_item_text_pairs(catalog: Catalog) -> List[PairExample]:
    """One pair per item with nonempty text."""
    pairs = []
    for item in catalog.items:
        text = item.text
        if text:
            pairs.append(PairExample(kind="item-text", left=item.item_id, text=text))
    return pairs


def build_item_item_pairs(train: Sequence[UserSequence]) -> List[PairExample]:
    """Ordered consecutive pairs, deduplicated on (left, right) in first-seen order."""
    seen = set()
    pairs = []
    for sequence in train:
        for left, right in zip(sequence.items, sequence.items[1:]):
            if (left, right) not in seen:
                seen.add((left, right))
                pairs.append(PairExample(kind="item-item", left=left, right=right))
    return pairs


def build_user_item_pairs(train: Sequence[UserSequence]) -> List[PairExample]:
    seen = set()
    pairs = []
    for sequence in train:
        for item in sequence.items:
            if (sequence.user_id, item) not in seen:
                seen.add((sequence.user_id, item))
                pairs.append(PairExample(kind="user-item", left=sequence.user_id, right=item))
    return pairs


def attach_text_ids(pairs: Sequence[PairExample], vocab: Vocabulary) -> List[PairExample]:
    return [pair.model_copy(update={"text_ids": vocab.encode(pair.text)}) if pair.kind == "item-text" else pair
            for pair in pairs]


def holdout_pairs(pairs: Sequence[PairExample], fraction: float,
                  rng: np.random.Generator) -> Tuple[List[PairExample], List[PairExample]]:
    """Random (train, held-out) partition; at least one pair stays in train."""
    if not pairs or fraction <= 0:
        return list(pairs), []
    count = min(len(pairs) - 1, int(round(fraction * len(pairs))))
    held = set(rng.permutation(len(pairs))[:count].tolist())
    train = [p for i, p in enumerate(pairs) if i not in held]
    evaluation = [p for i, p in enumerate(pairs) if i in held]
    return train, evaluation
