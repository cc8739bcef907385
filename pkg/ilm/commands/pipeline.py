import json
import logging

from ..evaluation import aggregate_table
from ..public.schemas import config_schema
from .context import PipelineContext
from .data import gen_data
from .evaluation import aggregate_reports, run_evaluate
from .router import CommandRouter, argument
from .training import run_phase1, run_phase2, run_pretrain_backbone, run_train_mf, run_verify_frozen

logger = logging.getLogger("ilm.pipeline")

router = CommandRouter()

# text-only baseline, MLP adapter, randomly initialized Q-Former, phase-1 Q-Former
COMPARISON_ADAPTERS = ("none", "mlp", "qformer-rand", "qformer")


def run_seed(ctx: PipelineContext, adapters=COMPARISON_ADAPTERS, split: str = "test") -> None:
    gen_data(ctx, stage="ingest" if ctx.config.data.source == "movielens" else "gen-data")
    run_train_mf(ctx)
    run_pretrain_backbone(ctx)
    if "qformer" in adapters:
        run_phase1(ctx)
    for adapter in adapters:
        run_phase2(ctx, adapter)
        run_evaluate(ctx, adapter, split)
    for adapter in adapters:
        if adapter != "none":
            run_verify_frozen(ctx, adapter)


@router.command("run", help="all stages for every configured seed, then the cross-seed comparison",
                arguments=[argument("--adapters", nargs="+", choices=list(COMPARISON_ADAPTERS),
                                    default=list(COMPARISON_ADAPTERS)),
                           argument("--split", choices=["dev", "test"], default="test")])
def run_command(args) -> int:
    ctx = PipelineContext.from_args(args)
    seeds = [ctx.seed] if args.seed is not None else list(ctx.config.eval.seeds)
    for seed in seeds:
        logger.info(f"Pipeline run for seed {seed}")
        run_seed(ctx.for_seed(seed), args.adapters, args.split)
    records = []
    for adapter in args.adapters:
        records.extend(aggregate_reports(ctx, adapter, args.split))
    print(aggregate_table(records))
    return 0


@router.command("schema", help="print the JSON schema of the run config", needs_config=False)
def schema_command(args) -> int:
    print(json.dumps(config_schema(), indent=2, sort_keys=True))
    return 0
