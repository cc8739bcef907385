import re
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np
import ulid

from ..errors import UsageError

ITEM_TOKEN_PATTERN = re.compile(r"item_(\d+)")


def generate_ulid() -> str:
    return str(ulid.new())


def format_audit_id(sequence: int = 1) -> str:
    """
    AUYYYYMMDDHHMMSSuu## : prefix, local timestamp, 2 digits of
    microseconds, 2-digit sequence number.
    """
    now = datetime.now()
    timestamp = now.strftime("%Y%m%d%H%M%S")
    microseconds = int((now.microsecond % 1000000) / 10000)
    return f"AU{timestamp}{microseconds:02d}{sequence:02d}"


def user_token(user_id: int) -> str:
    return f"user_{user_id}"


# ==================== Item indexing ====================
class ItemIndexer:
    """Maps dense item indices to the number carried by their `item_<n>` token."""

    kind = "base"

    def __init__(self, numbers: Sequence[int]):
        self.numbers: List[int] = [int(n) for n in numbers]
        if len(set(self.numbers)) != len(self.numbers):
            raise UsageError(f"{self.kind} indexer assigns duplicate item numbers")
        self._items: Dict[int, int] = {n: i for i, n in enumerate(self.numbers)}

    def __len__(self) -> int:
        return len(self.numbers)

    def number(self, item_id: int) -> int:
        return self.numbers[item_id]

    def token(self, item_id: int) -> str:
        return f"item_{self.numbers[item_id]}"

    def item_for_number(self, number: int) -> Optional[int]:
        return self._items.get(int(number))

    def item_for_token(self, token: str) -> Optional[int]:
        match = ITEM_TOKEN_PATTERN.fullmatch(token)
        return self.item_for_number(int(match.group(1))) if match else None

    def to_lines(self) -> List[str]:
        return [self.kind] + [str(n) for n in self.numbers]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "ItemIndexer":
        if not lines:
            raise UsageError("empty item index file")
        kind = lines[0].strip()
        if kind not in INDEXERS:
            raise UsageError(f"unknown indexer kind '{kind}'")
        return INDEXERS[kind]([int(line) for line in lines[1:] if line.strip()])


class RandomIndexer(ItemIndexer):
    """Random indexing: each item gets an opaque number drawn without replacement."""

    kind = "random"

    @classmethod
    def build(cls, num_items: int, rng: np.random.Generator) -> "RandomIndexer":
        if num_items < 1:
            raise UsageError("cannot index an empty catalog")
        return cls((rng.permutation(num_items) + 1).tolist())


INDEXERS = {"random": RandomIndexer}


def build_indexer(kind: str, num_items: int, rng: np.random.Generator) -> ItemIndexer:
    if kind not in INDEXERS:
        raise UsageError(f"unknown indexer kind '{kind}'", hint=f"available: {sorted(INDEXERS)}")
    return INDEXERS[kind].build(num_items, rng)
