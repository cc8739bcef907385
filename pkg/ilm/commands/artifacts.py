"""
Loading upstream artifacts for a stage, with the config-hash check that
keeps one pipeline from mixing outputs of different configs.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..backbone import Backbone
from ..cf import ITEM_EMBEDDINGS, USER_EMBEDDINGS
from ..dataset.prompts import RECOMMENDATION_TASKS
from ..dataset.schemas import SequenceExample
from ..dataset.store import DatasetBundle, load_dataset, load_manifest
from ..fusion import FusedModel, build_adapter
from ..services.file_handler import read_checkpoint, sha256_file
from ..utils.seeding import substream
from .context import (
    BACKBONE_CHECKPOINT,
    DATA_MANIFEST,
    MF_CHECKPOINT,
    PHASE1_CHECKPOINT,
    PHASE2_CHECKPOINT,
    PipelineContext,
    check_config_hash,
    require_artifact,
)


@dataclass
class CFEmbeddings:
    users: np.ndarray
    items: np.ndarray
    content_hash: str

    @property
    def dim(self) -> int:
        return int(self.items.shape[1])


def load_data(ctx: PipelineContext, allow_mixed: bool = False) -> Tuple[DatasetBundle, str]:
    """Dataset bundle and the manifest file hash."""
    manifest = load_manifest(ctx.data_dir)
    check_config_hash(manifest.config_hash, ctx.upstream_hash, "dataset", "gen-data", allow_mixed)
    return load_dataset(ctx.data_dir), sha256_file(ctx.data_dir / DATA_MANIFEST)


def load_cf(ctx: PipelineContext, allow_mixed: bool = False) -> CFEmbeddings:
    checkpoint = read_checkpoint(require_artifact(ctx.mf_dir / MF_CHECKPOINT, "train-mf"))
    check_config_hash(checkpoint.metadata.get("config_hash"), ctx.upstream_hash, "CF embeddings", "train-mf",
                      allow_mixed)
    return CFEmbeddings(users=checkpoint[USER_EMBEDDINGS], items=checkpoint[ITEM_EMBEDDINGS],
                        content_hash=checkpoint.content_hash)


def load_backbone(ctx: PipelineContext, bundle: DatasetBundle, allow_mixed: bool = False) -> Tuple[Backbone, str]:
    path = require_artifact(ctx.backbone_dir / BACKBONE_CHECKPOINT, "pretrain-backbone")
    backbone, checkpoint = Backbone.load(path, bundle.vocab, ctx.config.backbone)
    check_config_hash(checkpoint.metadata.get("config_hash"), ctx.upstream_hash, "backbone", "pretrain-backbone",
                      allow_mixed)
    backbone.astype(ctx.dtype)
    return backbone, checkpoint.content_hash


def phase1_checkpoint(ctx: PipelineContext, allow_mixed: bool = False) -> Tuple[str, str]:
    """Path and content hash of this context's phase-1 checkpoint."""
    path = require_artifact(ctx.phase1_dir / PHASE1_CHECKPOINT, "phase1")
    checkpoint = read_checkpoint(path)
    check_config_hash(checkpoint.metadata.get("config_hash"), ctx.config_hash, "phase-1 checkpoint", "phase1",
                      allow_mixed)
    return str(path), checkpoint.content_hash


@dataclass
class FusedSetup:
    bundle: DatasetBundle
    model: FusedModel
    rng: np.random.Generator
    phase1_hash: Optional[str]


def build_fused(ctx: PipelineContext, adapter: str, allow_mixed: bool = False) -> FusedSetup:
    """
    Frozen backbone + a freshly built adapter of the requested kind. The
    adapter is initialized from the phase-2 substream; the same generator
    then drives batch sampling.
    """
    bundle, _ = load_data(ctx, allow_mixed)
    cf = load_cf(ctx, allow_mixed)
    backbone, backbone_hash = load_backbone(ctx, bundle, allow_mixed)
    phase1_path, phase1_hash = phase1_checkpoint(ctx, allow_mixed) if adapter == "qformer" else (None, None)
    rng = substream(ctx.seed, "phase2")
    module = build_adapter(adapter, ctx.config, cf.dim, len(bundle.vocab), backbone.dim, rng,
                           phase1_path=phase1_path, phase1_hash=phase1_hash)
    if module is not None:
        module.astype(ctx.dtype)
    model = FusedModel(backbone, module, cf.items, cf.users, backbone_hash=backbone_hash, adapter_kind=adapter)
    return FusedSetup(bundle=bundle, model=model, rng=rng, phase1_hash=phase1_hash)


def load_trained(ctx: PipelineContext, adapter: str, allow_mixed: bool = False) -> FusedSetup:
    """Fused model with the phase-2 state restored; the text-only baseline needs no checkpoint."""
    setup = build_fused(ctx, adapter, allow_mixed)
    path = ctx.phase2_dir(adapter) / PHASE2_CHECKPOINT
    if adapter == "none" and not path.exists():
        return setup
    checkpoint = setup.model.load_trainable(require_artifact(path, "phase2"))
    check_config_hash(checkpoint.metadata.get("config_hash"), ctx.config_hash, f"phase-2 '{adapter}' checkpoint",
                      "phase2", allow_mixed)
    return setup


def dev_selection_examples(ctx: PipelineContext, bundle: DatasetBundle) -> List[SequenceExample]:
    """Seen-template dev prompts of the trained recommendation tasks, subsampled with the eval substream."""
    pool: List[SequenceExample] = []
    for task in ctx.config.phase2.tasks:
        if task in RECOMMENDATION_TASKS:
            pool.extend(bundle.prompts_for("dev", task, "seen"))
    limit = ctx.config.phase2.dev_examples
    if len(pool) <= limit:
        return pool
    rng = substream(ctx.seed, "eval")
    chosen = np.sort(rng.choice(len(pool), size=limit, replace=False))
    return [pool[int(i)] for i in chosen]
