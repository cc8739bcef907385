import math
import re
from typing import List, Sequence

import numpy as np

from ..errors import UsageError

VALID_OUTPUT = re.compile(r".*item_(\d+)")


def filter_valid(outputs: Sequence[str]) -> List[int]:
    """Numeric ids of the outputs fully matching `.*item_(\\d+)`, in order."""
    ids = []
    for output in outputs:
        match = VALID_OUTPUT.fullmatch(output)
        if match:
            ids.append(int(match.group(1)))
    return ids


def dedup(ids: Sequence[int]) -> List[int]:
    """Collapse repeats to their first occurrence."""
    seen = set()
    kept = []
    for value in ids:
        if value not in seen:
            seen.add(value)
            kept.append(value)
    return kept


def _check_k(k: int) -> None:
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")


def hr_at_k(ranked: Sequence[int], target: int, k: int) -> float:
    _check_k(k)
    return 1.0 if target in list(ranked)[:k] else 0.0


def ndcg_at_k(ranked: Sequence[int], target: int, k: int) -> float:
    """Single relevant item: 1/log2(rank + 1) when its 1-based rank is <= k."""
    _check_k(k)
    head = list(ranked)[:k]
    if target not in head:
        return 0.0
    return 1.0 / math.log2(head.index(target) + 2)


def log_perplexity(per_example_nll: Sequence[Sequence[float]]) -> float:
    """Mean over examples of the mean target-token NLL."""
    if len(per_example_nll) == 0:
        raise UsageError("log perplexity of an empty example set")
    means = []
    for values in per_example_nll:
        if len(values) == 0:
            raise UsageError("example without target tokens")
        means.append(float(np.mean(values)))
    return float(np.mean(means))
