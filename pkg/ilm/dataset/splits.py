import logging
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

from .schemas import DatasetSplit, Interaction, SplitExample, UserSequence

logger = logging.getLogger("ilm.dataset")

MIN_SPLIT_LENGTH = 3


def split_leave_last(sequences: Sequence[UserSequence]) -> DatasetSplit:
    """
    Per user: test = last item with the full preceding history, dev =
    second-from-last with the history before it, train = everything earlier.
    """
    train, dev, test, excluded = [], [], [], []
    for sequence in sequences:
        items = list(sequence.items)
        if len(items) < MIN_SPLIT_LENGTH:
            excluded.append(sequence.user_id)
            continue
        train.append(UserSequence(user_id=sequence.user_id, items=items[:-2]))
        dev.append(SplitExample(user_id=sequence.user_id, history=items[:-2], target=items[-2]))
        test.append(SplitExample(user_id=sequence.user_id, history=items[:-1], target=items[-1]))
    if excluded:
        logger.warning(f"Excluded {len(excluded)} users with fewer than {MIN_SPLIT_LENGTH} interactions from splits")
    return DatasetSplit(train=train, dev=dev, test=test, excluded_users=excluded)


def mf_training_triples(split: DatasetSplit, interactions: Sequence[Interaction],
                        confidence: str = "occurrence") -> Tuple[List[int], List[int], List[float]]:
    """
    Interactions allowed into factorization: train-split items of included
    users plus every interaction of users excluded from the split. Weight is
    1 per occurrence, or the rating value under `confidence="rating"`.
    """
    by_user: Dict[int, List[Interaction]] = defaultdict(list)
    for interaction in interactions:
        by_user[interaction.user_id].append(interaction)
    allowed = {seq.user_id: len(seq.items) for seq in split.train}
    excluded = set(split.excluded_users)

    users, items, weights = [], [], []
    for user_id in sorted(by_user):
        records = by_user[user_id]
        if user_id in allowed:
            records = records[:allowed[user_id]]
        elif user_id not in excluded:
            continue
        for record in records:
            users.append(user_id)
            items.append(record.item_id)
            weights.append(record.weight if confidence == "rating" else 1.0)
    return users, items, weights
