"""
Recommendation evaluation: beam-decode every prompt, keep outputs matching
the item-id pattern, collapse duplicates and score against the target.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..backbone import decode_hypotheses, generate_beam
from ..dataset.prompts import RECOMMENDATION_TASKS
from ..dataset.schemas import SequenceExample
from ..errors import UsageError
from ..public.schemas import EvalConfig
from ..template.prompt_templates import REGIMES
from ..utils.formatting_id import ItemIndexer
from .metrics import dedup, filter_valid, hr_at_k, log_perplexity, ndcg_at_k
from .schemas import AggregateRecord, EvalReport, MetricRecord

logger = logging.getLogger("ilm.evaluation")

SELECTION_K = 10


@dataclass
class ExampleResult:
    outputs: List[str]
    ranked: List[int]
    target: int
    target_nll: np.ndarray


def _map(function, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) < 2:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, items))


def rank_outputs(outputs: Sequence[str]) -> List[int]:
    return dedup(filter_valid(outputs))


def evaluate_example(model, example: SequenceExample, indexer: ItemIndexer, beam_size: int, max_new: int,
                     with_nll: bool = True) -> ExampleResult:
    hypotheses = generate_beam(model, example, beam_size=beam_size, max_new=max_new, eos_id=model.vocab.eos_id)
    outputs = decode_hypotheses(hypotheses, model.vocab)
    target = indexer.number(example.target_item) if example.target_item is not None else -1
    nll = model.target_nll(example) if with_nll else np.zeros(0)
    return ExampleResult(outputs=outputs, ranked=rank_outputs(outputs), target=target, target_nll=nll)


def recommendation_metrics(results: Sequence[ExampleResult], k_values: Sequence[int]) -> Dict[str, float]:
    """Per-metric means over examples, keyed 'hr@5', 'ndcg@10', ..., plus 'valid_rate'."""
    if not results:
        raise UsageError("no examples to score")
    metrics: Dict[str, float] = {}
    for k in k_values:
        metrics[f"hr@{k}"] = float(np.mean([hr_at_k(r.ranked, r.target, k) for r in results]))
        metrics[f"ndcg@{k}"] = float(np.mean([ndcg_at_k(r.ranked, r.target, k) for r in results]))
    total = sum(len(r.outputs) for r in results)
    metrics["valid_rate"] = sum(len(filter_valid(r.outputs)) for r in results) / total if total else 0.0
    return metrics


def dev_ndcg(model, examples: Sequence[SequenceExample], indexer: ItemIndexer, beam_size: int, max_new: int,
             workers: int = 1) -> float:
    """NDCG@10 used for phase-2 checkpoint selection."""
    results = _map(lambda ex: evaluate_example(model, ex, indexer, beam_size, max_new, with_nll=False),
                   list(examples), workers)
    return recommendation_metrics(results, [SELECTION_K])[f"ndcg@{SELECTION_K}"]


def _records(task: str, regime: str, results: Sequence[ExampleResult], k_values: Sequence[int]) -> List[MetricRecord]:
    count = len(results)
    records = []
    if task in RECOMMENDATION_TASKS:
        metrics = recommendation_metrics(results, k_values)
        for k in k_values:
            records.append(MetricRecord(task=task, regime=regime, metric="hr", k=k, value=metrics[f"hr@{k}"],
                                        count=count))
            records.append(MetricRecord(task=task, regime=regime, metric="ndcg", k=k, value=metrics[f"ndcg@{k}"],
                                        count=count))
        records.append(MetricRecord(task=task, regime=regime, metric="valid_rate", value=metrics["valid_rate"],
                                    count=count))
    records.append(MetricRecord(task=task, regime=regime, metric="log_perplexity",
                                value=log_perplexity([r.target_nll for r in results]), count=count))
    return records


def evaluate_run(model, prompts: Dict[str, List[SequenceExample]], indexer: ItemIndexer, split: str,
                 tasks: Sequence[str], config: EvalConfig, adapter: str, seed: int, config_hash: str) -> EvalReport:
    """
    Args:
        prompts: eval prompts keyed "{split}_{task}_{regime}"
    """
    report = EvalReport(adapter=adapter, split=split, seed=seed, config_hash=config_hash)
    for task in tasks:
        for regime in REGIMES:
            key = f"{split}_{task}_{regime}"
            examples = prompts.get(key, [])
            if config.max_examples is not None:
                examples = examples[:config.max_examples]
            if not examples:
                logger.warning(f"No {split} examples for {task} ({regime}); skipped")
                continue
            decode = task in RECOMMENDATION_TASKS
            results = _map(
                lambda ex: _score(model, ex, indexer, config, decode), list(examples), config.workers)
            report.records.extend(_records(task, regime, results, config.k_values))
            logger.info(f"Evaluated {adapter} on {split}/{task}/{regime}: {len(examples)} examples")
    return report


def _score(model, example: SequenceExample, indexer: ItemIndexer, config: EvalConfig, decode: bool) -> ExampleResult:
    if decode:
        return evaluate_example(model, example, indexer, config.beam_size, config.max_new_tokens)
    return ExampleResult(outputs=[], ranked=[], target=-1, target_nll=model.target_nll(example))


def aggregate_seeds(reports: Sequence[EvalReport]) -> List[AggregateRecord]:
    """Mean ± standard error (ddof=1; zero for a single seed) per adapter, task, regime and metric."""
    if not reports:
        raise UsageError("no reports to aggregate")
    frame = pd.concat([report.frame() for report in reports], ignore_index=True)
    grouped = frame.groupby(["adapter", "task", "regime", "metric"], sort=True)["value"]
    summary = grouped.agg(mean_value="mean", std_value="std", seeds="count").reset_index()
    records = []
    for row in summary.itertuples(index=False):
        seeds = int(row.seeds)
        stderr = float(row.std_value) / np.sqrt(seeds) if seeds > 1 else 0.0
        records.append(AggregateRecord(adapter=row.adapter, task=row.task, regime=row.regime, metric=row.metric,
                                       mean=float(row.mean_value), stderr=stderr, seeds=seeds))
    return records


def aggregate_table(records: Sequence[AggregateRecord], metrics: Optional[Sequence[str]] = None) -> str:
    frame = pd.DataFrame([r.model_dump() for r in records])
    if frame.empty:
        return "(no metrics)"
    if metrics is not None:
        frame = frame[frame["metric"].isin(metrics)]
    frame = frame.assign(value=[f"{m:.4f} ± {s:.4f}" for m, s in zip(frame["mean"], frame["stderr"])])
    pivot = frame.pivot_table(index=["adapter", "task", "regime"], columns="metric", values="value", aggfunc="first")
    return pivot.to_string()
