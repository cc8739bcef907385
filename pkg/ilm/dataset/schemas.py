from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

PairKind = Literal["item-text", "item-item", "user-item"]
EntityKind = Literal["item", "user"]


class ItemRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    item_id: int
    raw_id: str
    title: str = ""
    tags: List[str] = Field(default_factory=list)
    cluster: Optional[int] = None

    @property
    def text(self) -> str:
        """'Title | Tag, Tag'; empty when the item has no metadata."""
        parts = []
        if self.title.strip():
            parts.append(self.title.strip())
        if self.tags:
            parts.append(", ".join(self.tags))
        return " | ".join(parts)


class UserRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_id: int
    raw_id: str
    preferred_cluster: Optional[int] = None


class Catalog(BaseModel):
    items: List[ItemRecord]
    users: List[UserRecord]

    @property
    def num_items(self) -> int:
        return len(self.items)

    @property
    def num_users(self) -> int:
        return len(self.users)

    def item_text(self, item_id: int) -> str:
        return self.items[item_id].text


class UserSequence(BaseModel):
    user_id: int
    items: List[int]


class Interaction(BaseModel):
    user_id: int
    item_id: int
    weight: float
    timestamp: int


class SplitExample(BaseModel):
    """One held-out target with the history that precedes it."""

    user_id: int
    history: List[int]
    target: int


class DatasetSplit(BaseModel):
    train: List[UserSequence]
    dev: List[SplitExample]
    test: List[SplitExample]
    excluded_users: List[int] = Field(default_factory=list)


class PairExample(BaseModel):
    kind: PairKind
    left: int
    right: Optional[int] = None
    text: str = ""
    text_ids: List[int] = Field(default_factory=list)


class Slot(BaseModel):
    """Placeholder marker at `position` in the prompt, bound to an entity."""

    position: int
    kind: EntityKind
    entity_id: int


class SequenceExample(BaseModel):
    task: str
    template_id: str
    user_id: int
    prompt_ids: List[int]
    slots: List[Slot] = Field(default_factory=list)
    target_ids: List[int]
    target_item: Optional[int] = None


class DatasetStats(BaseModel):
    num_users: int
    num_items: int
    item_text_pairs: int
    item_item_pairs: int
    user_item_pairs: int
    train_interactions: int
    dev_examples: int
    test_examples: int
    excluded_users: int
    items_without_text: int
    vocabulary_size: int
