import logging
from pathlib import Path
from typing import List, Optional

from ..evaluation import AggregateRecord, EvalReport, aggregate_seeds, aggregate_table, evaluate_run
from ..services.file_handler import read_jsonl, write_jsonl
from .artifacts import load_trained
from .context import PipelineContext, stage_run
from .router import ADAPTER_ARGUMENT, CommandRouter, argument

logger = logging.getLogger("ilm.pipeline")

router = CommandRouter()


def report_path(ctx: PipelineContext, adapter: str, split: str) -> Path:
    return ctx.reports_dir / f"eval_{adapter}_{split}.jsonl"


def run_evaluate(ctx: PipelineContext, adapter: str, split: str = "test", allow_mixed: bool = False) -> EvalReport:
    setup = load_trained(ctx, adapter, allow_mixed)
    with stage_run(ctx, "evaluate", adapter=adapter, parent_hash=setup.model.backbone_hash) as outputs:
        report = evaluate_run(setup.model, setup.bundle.eval_prompts, setup.bundle.indexer, split,
                              ctx.config.phase2.tasks, ctx.config.eval, adapter, ctx.seed, ctx.config_hash)
        path = report_path(ctx, adapter, split)
        outputs[path.name] = (path, write_jsonl(path, [report]))
    return report


def aggregate_reports(ctx: PipelineContext, adapter: str, split: str) -> List[AggregateRecord]:
    """Mean ± standard error over every configured seed that has a report; written next to the seed dirs."""
    reports = []
    for seed in ctx.config.eval.seeds:
        path = report_path(ctx.for_seed(seed), adapter, split)
        if path.exists():
            reports.extend(read_jsonl(path, EvalReport))
        else:
            logger.info(f"No {split} report for seed {seed} ({adapter}); left out of the aggregate")
    if not reports:
        return []
    records = aggregate_seeds(reports)
    path = ctx.out / "reports" / f"aggregate_{adapter}_{split}.jsonl"
    with stage_run(ctx, "aggregate", adapter=adapter) as outputs:
        outputs[path.name] = (path, write_jsonl(path, records))
    return records


def evaluate_seeds(ctx: PipelineContext, adapter: str, split: str, seeds: Optional[List[int]] = None,
                   allow_mixed: bool = False) -> List[AggregateRecord]:
    for seed in seeds if seeds is not None else [ctx.seed]:
        report = run_evaluate(ctx.for_seed(seed), adapter, split, allow_mixed)
        print(f"== {adapter} / {split} / seed {seed} ==")
        print(report.table())
    return aggregate_reports(ctx, adapter, split)


@router.command("evaluate", help="beam-search evaluation of a trained adapter (HR@K, NDCG@K, log perplexity)",
                arguments=[ADAPTER_ARGUMENT,
                           argument("--split", choices=["dev", "test"], default="test"),
                           argument("--allow-mixed", action="store_true",
                                    help="accept upstream artifacts built with another config hash"),
                           argument("--all-seeds", action="store_true",
                                    help="evaluate every seed in eval.seeds before aggregating")])
def evaluate_command(args) -> int:
    ctx = PipelineContext.from_args(args)
    adapter = ctx.adapter(args.adapter)
    seeds = list(ctx.config.eval.seeds) if args.all_seeds else None
    records = evaluate_seeds(ctx, adapter, args.split, seeds, args.allow_mixed)
    if records and records[0].seeds > 1:
        print(f"== {adapter} / {args.split} / mean ± stderr over seeds ==")
        print(aggregate_table(records))
    return 0
