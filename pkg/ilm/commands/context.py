"""
Shared plumbing of every pipeline command: config loading with CLI
overrides, the per-seed directory layout, upstream artifact checks and the
locked, registry-tracked stage scope.
"""
import logging
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .. import database
from ..autograd import default_dtype
from ..dependencies import registry_session
from ..errors import DependencyError
from ..public.schemas import RunConfig, load_config
from ..services.file_handler import PipelineLock
from ..services.registry import finish_stage, start_stage

logger = logging.getLogger("ilm.pipeline")

DATA_MANIFEST = "manifest.jsonl"
MF_CHECKPOINT = "embeddings.ilmc"
BACKBONE_CHECKPOINT = "backbone.ilmc"
PHASE1_CHECKPOINT = "qformer.ilmc"
PHASE2_CHECKPOINT = "trainable.ilmc"

Outputs = Dict[str, Tuple[Path, str]]


@dataclass(frozen=True)
class PipelineContext:
    """
    Where one seed's artifacts live. Data, CF embeddings and the backbone sit
    directly under the seed directory; phase 1, phase 2 and reports sit under
    `variant_root` so ablation members share the upstream artifacts.
    """
    config: RunConfig
    out: Path
    upstream_hash: str
    variant_root: Optional[Path] = None
    show_progress: bool = False

    @classmethod
    def from_args(cls, args) -> "PipelineContext":
        defaults = {"train_dtype": database.TRAIN_DTYPE} if database.TRAIN_DTYPE else None
        config = load_config(args.config, defaults=defaults)
        if getattr(args, "seed", None) is not None:
            config = config.with_overrides(seed=args.seed)
        out = Path(getattr(args, "out", None) or database.PIPELINE_DIR)
        return cls(config=config, out=out, upstream_hash=config.config_hash(),
                   show_progress=bool(getattr(args, "progress", False)))

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    @property
    def dtype(self):
        return np.float32 if self.config.train_dtype == "float32" else np.float64

    @property
    def seed_dir(self) -> Path:
        return self.out / f"seed_{self.seed}"

    @property
    def data_dir(self) -> Path:
        return self.seed_dir / "data"

    @property
    def mf_dir(self) -> Path:
        return self.seed_dir / "mf"

    @property
    def backbone_dir(self) -> Path:
        return self.seed_dir / "backbone"

    @property
    def root(self) -> Path:
        return self.variant_root or self.seed_dir

    @property
    def phase1_dir(self) -> Path:
        return self.root / "phase1"

    def phase2_dir(self, adapter: str) -> Path:
        return self.root / "phase2" / adapter

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def adapter(self, requested: Optional[str] = None) -> str:
        return requested or self.config.phase2.adapter

    def for_seed(self, seed: int) -> "PipelineContext":
        config = self.config.with_overrides(seed=seed)
        return replace(self, config=config, upstream_hash=config.config_hash(), variant_root=None)

    def variant(self, name: str, **overrides) -> "PipelineContext":
        """Same upstream artifacts, a changed downstream config under `ablate/<name>`."""
        return replace(self, config=self.config.with_overrides(**overrides),
                       variant_root=self.seed_dir / "ablate" / name)


def require_artifact(path: Path, stage: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {path}; run `ilm {stage}` first", stage=stage)
    return path


def check_config_hash(found: Optional[str], expected: str, what: str, stage: str, allow_mixed: bool = False) -> None:
    if found == expected:
        return
    detail = f"{what} was built with config {str(found)[:12]}, current config is {expected[:12]}"
    if allow_mixed:
        logger.warning(f"Mixed config hashes accepted: {detail}")
        return
    raise DependencyError(f"mixed config hashes: {detail}", stage=stage)


@contextmanager
def stage_run(ctx: PipelineContext, stage: str, adapter: Optional[str] = None,
              parent_hash: Optional[str] = None) -> Iterator[Outputs]:
    """
    Holds the pipeline lock and registers the run for the duration of one
    stage. The body fills the yielded dict with name -> (path, content hash).
    """
    lock = PipelineLock(ctx.out)
    lock.acquire(owner=f"{stage} seed={ctx.seed}")
    try:
        database.init_registry(ctx.out)
        with registry_session() as db:
            run = start_stage(db, stage, ctx.seed, ctx.config_hash, adapter=adapter, parent_hash=parent_hash)
            logger.info(f"Stage {stage} started (seed={ctx.seed}, config={ctx.config_hash[:12]}"
                        f"{', adapter=' + adapter if adapter else ''})")
            outputs: Outputs = {}
            try:
                with default_dtype(ctx.dtype):
                    yield outputs
            except Exception as e:
                finish_stage(db, run, "failed", detail=f"{type(e).__name__}: {e}")
                raise
            finish_stage(db, run, "ok", outputs)
            logger.info(f"Stage {stage} finished with {len(outputs)} artifacts")
    finally:
        lock.release()
