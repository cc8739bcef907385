from .harness import (
    SELECTION_K,
    ExampleResult,
    aggregate_seeds,
    aggregate_table,
    dev_ndcg,
    evaluate_example,
    evaluate_run,
    rank_outputs,
    recommendation_metrics,
)
from .metrics import VALID_OUTPUT, dedup, filter_valid, hr_at_k, log_perplexity, ndcg_at_k
from .schemas import AblationRecord, AggregateRecord, EvalReport, FrozenCheck, MetricRecord
