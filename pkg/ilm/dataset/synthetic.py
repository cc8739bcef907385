"""
Clustered synthetic catalog and user sequences.

Items are assigned round-robin to latent clusters. Each user prefers one
cluster; a sequence starts in it and each next item stays in the current
cluster with probability `within_cluster_prob`, otherwise moves to the
preferred cluster (or, when already there, to a uniformly chosen other one).
Items never repeat within a sequence.
"""
import logging
from typing import List, Tuple

import numpy as np

from ..errors import UsageError
from ..public.schemas import DataConfig
from .schemas import Catalog, Interaction, ItemRecord, UserRecord, UserSequence

logger = logging.getLogger("ilm.dataset")

TAG_POOLS = [
    ["space", "robots", "future", "galaxy", "alien", "laser", "android", "starship"],
    ["romance", "wedding", "letters", "paris", "heart", "summer", "kiss", "promise"],
    ["detective", "murder", "clue", "alibi", "noir", "heist", "witness", "mystery"],
    ["dragon", "wizard", "quest", "castle", "sword", "kingdom", "spell", "forest"],
    ["comedy", "prank", "roommates", "holiday", "road", "party", "family", "chaos"],
    ["ocean", "storm", "island", "rescue", "survival", "mountain", "desert", "voyage"],
    ["music", "band", "stage", "dance", "concert", "rhythm", "singer", "tour"],
    ["war", "soldier", "battle", "history", "empire", "spy", "resistance", "general"],
]
TITLE_WORDS = ["the", "last", "night", "return", "of", "secret", "city", "lost", "silent", "golden", "dark",
               "long", "little", "wild", "first", "final", "hidden", "broken", "bright", "distant"]


def _cluster_tags(cluster: int) -> List[str]:
    pool = TAG_POOLS[cluster % len(TAG_POOLS)]
    if cluster < len(TAG_POOLS):
        return pool
    return [f"{tag}{cluster // len(TAG_POOLS)}" for tag in pool]


def _choose_item(rng: np.random.Generator, cluster_items: List[int], used: set) -> int:
    available = [i for i in cluster_items if i not in used]
    if not available:
        return -1
    return int(available[rng.integers(len(available))])


def synth_generate(config: DataConfig, rng: np.random.Generator) -> Tuple[Catalog, List[UserSequence], List[Interaction]]:
    num_users, num_items, num_clusters = config.num_users, config.num_items, config.num_clusters
    if num_clusters > num_items:
        raise UsageError(f"cluster count {num_clusters} exceeds item count {num_items}")
    if config.min_length > num_items:
        raise UsageError(f"min_length {config.min_length} exceeds item count {num_items}")

    clusters = [i % num_clusters for i in range(num_items)]
    cluster_items = [[i for i in range(num_items) if clusters[i] == c] for c in range(num_clusters)]

    sparse_count = int(round(config.text_sparsity * num_items))
    empty_text = set(rng.permutation(num_items)[:sparse_count].tolist())

    items = []
    for i in range(num_items):
        if i in empty_text:
            items.append(ItemRecord(item_id=i, raw_id=str(i), cluster=clusters[i]))
            continue
        title_words = rng.choice(len(TITLE_WORDS), size=2, replace=False)
        title = " ".join(TITLE_WORDS[w] for w in title_words).title()
        pool = _cluster_tags(clusters[i])
        tag_idx = np.sort(rng.choice(len(pool), size=min(config.tags_per_item, len(pool)), replace=False))
        items.append(ItemRecord(item_id=i, raw_id=str(i), title=title, tags=[pool[t] for t in tag_idx],
                                cluster=clusters[i]))

    users = []
    sequences = []
    interactions = []
    for u in range(num_users):
        preferred = int(rng.integers(num_clusters))
        users.append(UserRecord(user_id=u, raw_id=str(u), preferred_cluster=preferred))
        length = int(rng.integers(config.min_length, config.max_length + 1))
        length = min(length, num_items)
        used: set = set()
        current = preferred
        sequence: List[int] = []
        while len(sequence) < length:
            if sequence:
                if rng.random() >= config.within_cluster_prob:
                    if current != preferred:
                        current = preferred
                    elif num_clusters > 1:
                        others = [c for c in range(num_clusters) if c != current]
                        current = others[int(rng.integers(len(others)))]
            item = _choose_item(rng, cluster_items[current], used)
            if item < 0:
                # current cluster exhausted
                remaining = [c for c in range(num_clusters) if any(i not in used for i in cluster_items[c])]
                current = remaining[int(rng.integers(len(remaining)))]
                item = _choose_item(rng, cluster_items[current], used)
            used.add(item)
            sequence.append(item)
        sequences.append(UserSequence(user_id=u, items=sequence))
        interactions.extend(Interaction(user_id=u, item_id=i, weight=1.0, timestamp=t)
                            for t, i in enumerate(sequence))

    logger.info(f"Generated synthetic data: {num_users} users, {num_items} items, {num_clusters} clusters, "
                f"{len(empty_text)} items without text")
    return Catalog(items=items, users=users), sequences, interactions


def within_cluster_rate(catalog: Catalog, sequences: List[UserSequence]) -> float:
    same = total = 0
    for sequence in sequences:
        for a, b in zip(sequence.items, sequence.items[1:]):
            total += 1
            same += int(catalog.items[a].cluster == catalog.items[b].cluster)
    return same / total if total else 0.0
