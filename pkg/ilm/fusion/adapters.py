"""
Adapters turning a batch of CF embeddings (B, d_cf) into backbone-width rows
(B, M, d_m) that stand in for a placeholder marker.
"""
import logging
import math
from typing import Optional

import numpy as np

from ..autograd import Tensor, gelu, reshape
from ..errors import DependencyError, UsageError
from ..nn import INIT_STD, Linear, Module, load_module
from ..public.schemas import RunConfig
from ..qformer import QFormer

logger = logging.getLogger("ilm.fusion")

QFORMER_PREFIX = "qformer."
MLP_EXPANSION = 10


class QFormerAdapter(Module):
    """Q-Former query outputs followed by a linear projector d_q -> d_m."""

    def __init__(self, qformer: QFormer, backbone_dim: int, rng: np.random.Generator):
        self.qformer = qformer
        self.projector = Linear(qformer.dim, backbone_dim, rng, std=INIT_STD / math.sqrt(qformer.dim))

    @property
    def num_outputs(self) -> int:
        return self.qformer.num_queries

    def forward(self, embeddings) -> Tensor:
        return self.projector(self.qformer.encode_item(np.atleast_2d(embeddings)))


class MlpAdapter(Module):
    """Two-layer MLP, hidden width 10 * d_cf, emitting M rows per embedding."""

    def __init__(self, cf_dim: int, backbone_dim: int, num_outputs: int, rng: np.random.Generator):
        if num_outputs < 1:
            raise UsageError("the MLP adapter needs at least one output row")
        self.hidden = Linear(cf_dim, MLP_EXPANSION * cf_dim, rng)
        self.output = Linear(MLP_EXPANSION * cf_dim, num_outputs * backbone_dim, rng)
        self.cf_dim = cf_dim
        self.backbone_dim = backbone_dim
        self._num_outputs = num_outputs

    @property
    def num_outputs(self) -> int:
        return self._num_outputs

    @property
    def hidden_width(self) -> int:
        return self.hidden.weight.shape[1]

    def forward(self, embeddings) -> Tensor:
        e = np.atleast_2d(np.asarray(embeddings))
        x = Tensor(e, dtype=self.hidden.weight.dtype)
        rows = self.output(gelu(self.hidden(x)))
        return reshape(rows, (e.shape[0], self._num_outputs, self.backbone_dim))


def build_baseline_mlp(config: RunConfig, cf_dim: int, backbone_dim: int, rng: np.random.Generator) -> MlpAdapter:
    return MlpAdapter(cf_dim, backbone_dim, config.mlp_outputs, rng)


def build_ilm_rand(config: RunConfig, cf_dim: int, vocab_size: int, backbone_dim: int,
                   rng: np.random.Generator) -> QFormerAdapter:
    """ILM architecture with a freshly initialized Q-Former (no phase-1 checkpoint)."""
    qformer = QFormer.from_config(config.qformer, cf_dim, vocab_size, rng)
    return QFormerAdapter(qformer, backbone_dim, rng)


def build_ilm(config: RunConfig, cf_dim: int, vocab_size: int, backbone_dim: int, rng: np.random.Generator,
              phase1_path, phase1_hash: Optional[str] = None) -> QFormerAdapter:
    if phase1_path is None:
        raise DependencyError("adapter 'qformer' needs a phase-1 checkpoint", stage="phase1")
    adapter = build_ilm_rand(config, cf_dim, vocab_size, backbone_dim, rng)
    load_module(adapter.qformer, phase1_path, phase1_hash, prefix=QFORMER_PREFIX)
    return adapter


def build_adapter(kind: str, config: RunConfig, cf_dim: int, vocab_size: int, backbone_dim: int,
                  rng: np.random.Generator, phase1_path=None, phase1_hash: Optional[str] = None) -> Optional[Module]:
    """None for the text-only baseline, whose prompts lose their placeholders."""
    if kind == "qformer":
        return build_ilm(config, cf_dim, vocab_size, backbone_dim, rng, phase1_path, phase1_hash)
    if kind == "qformer-rand":
        return build_ilm_rand(config, cf_dim, vocab_size, backbone_dim, rng)
    if kind == "mlp":
        return build_baseline_mlp(config, cf_dim, backbone_dim, rng)
    if kind == "none":
        return None
    raise UsageError(f"unknown adapter '{kind}'")
