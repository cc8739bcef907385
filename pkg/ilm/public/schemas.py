import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError

PhaseOneMode = Literal["IT", "IT-II", "IT-UI", "IT-II-UI"]
AdapterKind = Literal["qformer", "qformer-rand", "mlp", "none"]
TaskName = Literal["sequential", "straightforward", "description"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Pydantic Schemas
class DataConfig(_Section):
    source: Literal["synthetic", "movielens"] = "synthetic"
    ratings_path: Optional[Path] = None
    movies_path: Optional[Path] = None
    num_users: int = Field(200, ge=1)
    num_items: int = Field(50, ge=1)
    num_clusters: int = Field(4, ge=1)
    within_cluster_prob: float = Field(0.9, ge=0.0, le=1.0)
    min_length: int = Field(5, ge=1)
    max_length: int = Field(20, ge=1)
    text_sparsity: float = Field(0.5, ge=0.0, le=1.0)
    tags_per_item: int = Field(2, ge=1)
    history_length: int = Field(10, ge=1)
    eval_text_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    indexer: Literal["random"] = "random"

    @model_validator(mode="after")
    def check_source(self) -> "DataConfig":
        if self.max_length < self.min_length:
            raise ValueError("max_length must be >= min_length")
        if self.source == "movielens":
            for field_name in ("ratings_path", "movies_path"):
                path = getattr(self, field_name)
                if path is None:
                    raise ValueError(f"{field_name} is required for source 'movielens'")
                if not Path(path).exists():
                    raise ValueError(f"{field_name} '{path}' does not exist")
        return self


class MFConfig(_Section):
    rank: int = Field(32, ge=1)
    alpha: float = Field(40.0, ge=0.0)
    regularization: float = Field(0.1, gt=0.0)
    sweeps: int = Field(30, ge=1)
    tolerance: float = Field(1e-6, ge=0.0)
    init_std: float = Field(0.01, gt=0.0)
    confidence: Literal["occurrence", "rating"] = "occurrence"
    workers: int = Field(1, ge=1)


class QFormerConfig(_Section):
    dim: int = Field(64, ge=1)
    num_queries: int = Field(8, ge=1)
    num_layers: int = Field(4, ge=1)
    num_heads: int = Field(4, ge=1)
    max_text_len: int = Field(24, ge=2)
    temperature_init: float = Field(0.07, ge=1e-3, le=10.0)
    mode: PhaseOneMode = "IT-II"
    epochs: int = Field(4, ge=1)
    batch_size: int = Field(16, ge=2)
    learning_rate: float = Field(3e-4, gt=0.0)
    warmup_steps: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_heads(self) -> "QFormerConfig":
        if self.dim % self.num_heads != 0:
            raise ValueError(f"qformer.dim {self.dim} is not divisible by num_heads {self.num_heads}")
        return self


class BackboneConfig(_Section):
    num_layers: int = Field(4, ge=1)
    dim: int = Field(128, ge=1)
    num_heads: int = Field(4, ge=1)
    max_len: int = Field(192, ge=8)
    pretrain_steps: int = Field(600, ge=1)
    batch_size: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    warmup_steps: int = Field(0, ge=0)

    @model_validator(mode="after")
    def check_heads(self) -> "BackboneConfig":
        if self.dim % self.num_heads != 0:
            raise ValueError(f"backbone.dim {self.dim} is not divisible by num_heads {self.num_heads}")
        return self


class Phase2Config(_Section):
    adapter: AdapterKind = "qformer"
    steps: int = Field(300, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    warmup_steps: int = Field(0, ge=0)
    tasks: List[TaskName] = Field(default_factory=lambda: ["sequential", "straightforward"])
    num_outputs: Optional[int] = Field(None, ge=1)
    eval_every: int = Field(100, ge=1)
    dev_examples: int = Field(50, ge=1)

    @field_validator("tasks")
    @classmethod
    def check_tasks(cls, tasks: List[str]) -> List[str]:
        if not tasks:
            raise ValueError("phase2.tasks must name at least one task")
        if not {"sequential", "straightforward"} & set(tasks):
            raise ValueError("phase2.tasks needs a recommendation task (sequential or straightforward)")
        return sorted(set(tasks), key=tasks.index)


class EvalConfig(_Section):
    k_values: List[int] = Field(default_factory=lambda: [5, 10])
    beam_size: int = Field(10, ge=1)
    max_new_tokens: int = Field(2, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    query_counts: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16])
    modes: List[PhaseOneMode] = Field(default_factory=lambda: ["IT", "IT-II", "IT-UI"])
    max_examples: Optional[int] = Field(None, ge=1)
    workers: int = Field(1, ge=1)

    @field_validator("k_values")
    @classmethod
    def check_k(cls, values: List[int]) -> List[int]:
        if not values or min(values) < 1:
            raise ValueError("eval.k_values must be positive")
        return sorted(set(values))


class RunConfig(_Section):
    name: str = "ilm"
    seed: int = 0
    train_dtype: Literal["float32", "float64"] = "float32"
    data: DataConfig = Field(default_factory=DataConfig)
    mf: MFConfig = Field(default_factory=MFConfig)
    qformer: QFormerConfig = Field(default_factory=QFormerConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    phase2: Phase2Config = Field(default_factory=Phase2Config)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump; the seed is part of the hash."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **updates) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. {"qformer.mode": "IT"}; re-validated."""
        payload = self.model_dump(mode="json")
        for dotted, value in updates.items():
            target = payload
            *parents, leaf = dotted.split(".")
            for part in parents:
                target = target[part]
            target[leaf] = value
        return parse_config(payload)

    @property
    def mlp_outputs(self) -> int:
        return self.phase2.num_outputs or self.qformer.num_queries


# Training records
class LossRecord(BaseModel):
    step: int
    loss: str
    value: float


class EpochRecord(BaseModel):
    epoch: int
    train_itg: float
    eval_itg: Optional[float] = None
    gap: Optional[float] = None


def parse_config(payload: dict, source: str = "<config>") -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{source}: {problems}")


def load_config(path, defaults: Optional[dict] = None) -> RunConfig:
    """`defaults` fill top-level keys the file leaves unset (environment defaults)."""
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            payload = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}")
    for key, value in (defaults or {}).items():
        payload.setdefault(key, value)
    return parse_config(payload, source=str(path))


def config_schema() -> dict:
    return RunConfig.model_json_schema()
