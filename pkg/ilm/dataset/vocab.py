import re
from typing import Dict, Iterable, List, Sequence

from ..errors import VocabularyError
from ..utils.formatting_id import ItemIndexer, user_token

PAD = "[PAD]"
BOS = "[BOS]"
EOS = "[EOS]"
CLS = "[CLS]"
SEP = "[SEP]"
UNK = "[UNK]"
ITEM_MARKER = "[ITEM]"
USER_MARKER = "[USER]"
SPECIAL_TOKENS = (PAD, BOS, EOS, CLS, SEP, UNK, ITEM_MARKER, USER_MARKER)
PLACEHOLDER_MARKERS = (ITEM_MARKER, USER_MARKER)

TOKEN_PATTERN = re.compile(r"item_\d+|user_\d+|\[[A-Z]+\]|\w+|[^\w\s]")


def tokenize(text: str) -> List[str]:
    """Word-level split on whitespace and punctuation; lowercases everything but special markers."""
    return [tok if tok.startswith("[") and tok.endswith("]") and tok[1:-1].isupper() else tok.lower()
            for tok in TOKEN_PATTERN.findall(text)]


class Vocabulary:
    """Bijective token <-> id table: special tokens, words, then one atomic token per item and user."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if token in self.index:
                raise VocabularyError(f"duplicate token '{token}' in vocabulary")
            self.index[token] = i
        missing = [t for t in SPECIAL_TOKENS if t not in self.index]
        if missing:
            raise VocabularyError(f"vocabulary lacks special tokens {missing}")

    @classmethod
    def build(cls, texts: Iterable[str], indexer: ItemIndexer, num_users: int) -> "Vocabulary":
        words = set()
        for text in texts:
            words.update(tokenize(text))
        words = sorted(w for w in words if w not in SPECIAL_TOKENS
                       and not w.startswith("item_") and not w.startswith("user_"))
        entity_tokens = [indexer.token(i) for i in range(len(indexer))] + [user_token(u) for u in range(num_users)]
        return cls(list(SPECIAL_TOKENS) + words + entity_tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        if token not in self.index:
            raise VocabularyError(f"unknown token '{token}'")
        return self.index[token]

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f"token id {token_id} out of range [0, {len(self.tokens)})")
        return self.tokens[token_id]

    def encode(self, text: str, strict: bool = True) -> List[int]:
        ids = []
        for tok in tokenize(text):
            if tok in self.index:
                ids.append(self.index[tok])
            elif strict:
                raise VocabularyError(f"unknown token '{tok}' in '{text}'")
            else:
                ids.append(self.index[UNK])
        return ids

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        words = [self.token(int(i)) for i in ids]
        if skip_special:
            words = [w for w in words if w not in SPECIAL_TOKENS]
        return " ".join(words)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def item_marker_id(self) -> int:
        return self.index[ITEM_MARKER]

    @property
    def user_marker_id(self) -> int:
        return self.index[USER_MARKER]

    def to_lines(self) -> List[str]:
        return list(self.tokens)

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "Vocabulary":
        return cls([line for line in lines if line])
