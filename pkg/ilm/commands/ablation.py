"""
Sweeps over the number of query tokens (Q-Former and MLP adapters) and over
the phase-1 loss mode. Every member reuses the seed's data, CF embeddings and
backbone; only phase 1, phase 2 and evaluation run per member.
"""
import logging
from typing import List

import pandas as pd

from ..dataset.prompts import RECOMMENDATION_TASKS
from ..evaluation import AblationRecord, EvalReport
from ..services.file_handler import write_jsonl
from .context import PipelineContext, stage_run
from .evaluation import run_evaluate
from .router import CommandRouter
from .training import run_phase1, run_phase2

logger = logging.getLogger("ilm.pipeline")

router = CommandRouter()

QUERY_SWEEP_ADAPTERS = ("qformer", "mlp")


def _metric_rows(report: EvalReport, sweep: str, setting: str) -> List[AblationRecord]:
    """One row per metric, averaged over the recommendation tasks and template regimes."""
    frame = report.frame()
    frame = frame[frame["task"].isin(RECOMMENDATION_TASKS)]
    if frame.empty:
        return []
    means = frame.groupby("metric", sort=True)["value"].mean()
    return [AblationRecord(sweep=sweep, adapter=report.adapter, setting=setting, metric=metric, value=float(value),
                           seed=report.seed) for metric, value in means.items()]


def query_sweep(ctx: PipelineContext) -> List[AblationRecord]:
    rows = []
    for count in ctx.config.eval.query_counts:
        member = ctx.variant(f"queries_{count}", **{"qformer.num_queries": count, "phase2.num_outputs": count})
        logger.info(f"Ablation: {count} query tokens")
        run_phase1(member)
        for adapter in QUERY_SWEEP_ADAPTERS:
            run_phase2(member, adapter)
            rows.extend(_metric_rows(run_evaluate(member, adapter, "test"), "queries", str(count)))
    return rows


def mode_sweep(ctx: PipelineContext) -> List[AblationRecord]:
    rows = []
    for mode in ctx.config.eval.modes:
        member = ctx.variant(f"mode_{mode}", **{"qformer.mode": mode})
        logger.info(f"Ablation: phase-1 mode {mode}")
        final = run_phase1(member).epochs[-1]
        itg = {"train_itg": final.train_itg, "eval_itg": final.eval_itg, "itg_gap": final.gap}
        rows.extend(AblationRecord(sweep="mode", adapter="qformer", setting=mode, metric=name, value=value,
                                   seed=ctx.seed) for name, value in itg.items() if value is not None)
        run_phase2(member, "qformer")
        rows.extend(_metric_rows(run_evaluate(member, "qformer", "test"), "mode", mode))
    return rows


def run_ablate(ctx: PipelineContext) -> List[AblationRecord]:
    rows = query_sweep(ctx) + mode_sweep(ctx)
    path = ctx.seed_dir / "ablate" / "ablation.jsonl"
    with stage_run(ctx, "ablate") as outputs:
        outputs[path.name] = (path, write_jsonl(path, rows))
    return rows


def ablation_table(rows: List[AblationRecord]) -> str:
    frame = pd.DataFrame([row.model_dump() for row in rows])
    if frame.empty:
        return "(no rows)"
    pivot = frame.pivot_table(index=["sweep", "adapter", "setting"], columns="metric", values="value",
                              aggfunc="first")
    return pivot.to_string(float_format=lambda v: f"{v:.4f}")


@router.command("ablate", help="sweep query-token counts and phase-1 loss modes on shared data")
def ablate_command(args) -> int:
    rows = run_ablate(PipelineContext.from_args(args))
    print(ablation_table(rows))
    return 0
