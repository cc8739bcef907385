from typing import List, Optional

import pandas as pd
from pydantic import BaseModel, Field


class MetricRecord(BaseModel):
    task: str
    regime: str
    metric: str
    k: Optional[int] = None
    value: float
    count: int

    @property
    def label(self) -> str:
        return self.metric if self.k is None else f"{self.metric}@{self.k}"


class EvalReport(BaseModel):
    adapter: str
    split: str
    seed: int
    config_hash: str
    records: List[MetricRecord] = Field(default_factory=list)

    def value(self, task: str, regime: str, metric: str, k: Optional[int] = None) -> float:
        for record in self.records:
            if (record.task, record.regime, record.metric, record.k) == (task, regime, metric, k):
                return record.value
        raise KeyError(f"{task}/{regime}/{metric}@{k}")

    def frame(self) -> pd.DataFrame:
        rows = [{"adapter": self.adapter, "split": self.split, "seed": self.seed, "task": r.task,
                 "regime": r.regime, "metric": r.label, "value": r.value, "count": r.count} for r in self.records]
        return pd.DataFrame(rows, columns=["adapter", "split", "seed", "task", "regime", "metric", "value", "count"])

    def table(self) -> str:
        """Human-readable (task, regime) x metric table."""
        frame = self.frame()
        if frame.empty:
            return "(no metrics)"
        pivot = frame.pivot_table(index=["task", "regime"], columns="metric", values="value", aggfunc="first")
        return pivot.to_string(float_format=lambda v: f"{v:.4f}")


class AggregateRecord(BaseModel):
    """Mean and standard error of one metric across seeds."""

    adapter: str
    task: str
    regime: str
    metric: str
    mean: float
    stderr: float
    seeds: int


class FrozenCheck(BaseModel):
    adapter: str
    seed: int
    prompts: int
    max_abs_logit_diff: float
    backbone_checksum: str
    unchanged: bool


class AblationRecord(BaseModel):
    """One row of a sweep: (sweep, adapter, setting, metric) -> value."""

    sweep: str
    adapter: str
    setting: str
    metric: str
    value: float
    seed: int
