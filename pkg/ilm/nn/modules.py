"""
Transformer building blocks shared by the Q-Former towers and the backbone.

Conventions: activations are (batch, length, dim) Tensors; attention masks are
boolean numpy arrays with True meaning "may attend"; weights are stored as
(in, out) so a projection is `x @ W + b`.
"""
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import Tensor, concat, gelu, layer_norm, reshape, softmax, take
from ..errors import DimensionError, UsageError, VocabularyError

INIT_STD = 0.02


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data, requires_grad: bool = True, name: Optional[str] = None):
        super().__init__(data, requires_grad=requires_grad, name=name)

    def assign(self, value: np.ndarray) -> None:
        value = np.array(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise DimensionError(f"cannot assign shape {value.shape} to parameter of shape {self.data.shape}")
        value.flags.writeable = False
        self.data = value


# ==================== Module base ====================
class Module:
    """Minimal parameter container with deterministic, insertion-ordered naming."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise UsageError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, param in own.items():
            if name in state:
                param.assign(state[name])

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = np.array(p.data, dtype=dtype)
            p.data.flags.writeable = False
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


# ==================== Layers ====================
class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True, std: float = INIT_STD):
        self.weight = Parameter(_normal(rng, (in_dim, out_dim), std))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"Linear expects last extent {self.in_dim}, got {x.shape}")
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.eps) * self.gain + self.bias


class FeedForward(Module):
    """GELU MLP with hidden width 4×d."""

    def __init__(self, dim: int, rng: np.random.Generator, expansion: int = 4):
        self.up = Linear(dim, expansion * dim, rng)
        self.down = Linear(expansion * dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention with per-head query/key/value projections and
    an output projection. Accepts unbatched (L, d) or batched (B, L, d) inputs.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if num_heads < 1 or dim % num_heads != 0:
            raise DimensionError(f"model dimension {dim} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.dim = dim
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return reshape(x, (batch, length, self.num_heads, self.head_dim)).transpose(0, 2, 1, 3)

    def forward(self, queries: Tensor, keys: Tensor, values: Optional[Tensor] = None,
                mask: Optional[np.ndarray] = None) -> Tensor:
        values = keys if values is None else values
        unbatched = queries.ndim == 2
        if unbatched:
            queries = reshape(queries, (1,) + queries.shape)
            keys = reshape(keys, (1,) + keys.shape)
            values = reshape(values, (1,) + values.shape)
            if mask is not None:
                mask = np.asarray(mask, dtype=bool)[None]
        batch, q_len, _ = queries.shape
        k_len = keys.shape[1]
        if values.shape[1] != k_len:
            raise DimensionError(f"keys ({k_len}) and values ({values.shape[1]}) lengths differ")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape[-2:] != (q_len, k_len):
                raise DimensionError(f"mask shape {mask.shape} does not match {q_len}x{k_len}")
            mask = mask[:, None, :, :] if mask.ndim == 3 else mask

        q = self._split(self.query(queries))
        k = self._split(self.key(keys))
        v = self._split(self.value(values))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        weights = softmax(scores, axis=-1, mask=mask)
        mixed = (weights @ v).transpose(0, 2, 1, 3)
        out = self.output(reshape(mixed, (batch, q_len, self.dim)))
        if unbatched:
            out = reshape(out, (q_len, self.dim))
        return out


class TransformerBlock(Module):
    """
    Pre-norm residual block: self-attention, optional cross-attention to an
    external context, feed-forward.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, cross_attention: bool = False):
        self.self_norm = LayerNorm(dim)
        self.self_attention = MultiHeadAttention(dim, num_heads, rng)
        if cross_attention:
            self.cross_norm = LayerNorm(dim)
            self.cross_attention = MultiHeadAttention(dim, num_heads, rng)
        else:
            self.cross_norm = None
            self.cross_attention = None
        self.ff_norm = LayerNorm(dim)
        self.feed_forward = FeedForward(dim, rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None, context: Optional[Tensor] = None,
                context_mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.self_norm(x)
        x = x + self.self_attention(h, h, mask=mask)
        if context is not None:
            if self.cross_attention is None:
                raise UsageError("block was built without cross-attention")
            x = x + self.cross_attention(self.cross_norm(x), context, mask=context_mask)
        return x + self.feed_forward(self.ff_norm(x))


class TokenEmbeddingTable(Module):
    """Token embeddings plus learned positional embeddings up to `max_len`."""

    def __init__(self, vocab_size: int, dim: int, max_len: int, rng: np.random.Generator):
        self.tokens = Parameter(_normal(rng, (vocab_size, dim)))
        self.positions = Parameter(_normal(rng, (max_len, dim)))
        self.vocab_size = vocab_size
        self.max_len = max_len

    def embed_tokens(self, token_ids) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(f"token id out of range [0, {self.vocab_size})")
        return take(self.tokens, ids)

    def add_positions(self, x: Tensor) -> Tensor:
        length = x.shape[-2]
        if length > self.max_len:
            raise DimensionError(f"sequence length {length} exceeds maximum {self.max_len}")
        return x + self.positions[:length]

    def forward(self, token_ids) -> Tensor:
        return self.add_positions(self.embed_tokens(token_ids))


# ==================== Masks ====================
def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def padding_mask(lengths, max_len: int) -> np.ndarray:
    """(B, max_len) True for real positions under right padding."""
    lengths = np.asarray(lengths)
    return np.arange(max_len)[None, :] < lengths[:, None]


def combine_masks(valid: np.ndarray, causal: bool) -> np.ndarray:
    """(B, L, L) attention mask from a (B, L) validity mask."""
    length = valid.shape[1]
    mask = np.broadcast_to(valid[:, None, :], (valid.shape[0], length, length))
    if causal:
        mask = mask & causal_mask(length)[None]
    return mask


def stack_padded(rows: List[Tensor], length: int) -> Tensor:
    """Right-pad a list of (L_i, d) tensors with zeros and stack into (B, length, d)."""
    padded = []
    for row in rows:
        missing = length - row.shape[0]
        if missing:
            row = concat([row, Tensor(np.zeros((missing, row.shape[1]), dtype=row.dtype))], axis=0)
        padded.append(reshape(row, (1, length, row.shape[1])))
    return concat(padded, axis=0)


def pad_token_ids(sequences: List[List[int]], pad_id: int, length: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad token id lists into (B, L) ids plus a (B, L) validity mask."""
    if not sequences:
        raise UsageError("cannot pad an empty batch")
    length = max(len(s) for s in sequences) if length is None else length
    ids = np.full((len(sequences), length), pad_id, dtype=np.int64)
    valid = np.zeros((len(sequences), length), dtype=bool)
    for row, seq in enumerate(sequences):
        seq = list(seq)[:length]
        ids[row, :len(seq)] = seq
        valid[row, :len(seq)] = True
    return ids, valid
