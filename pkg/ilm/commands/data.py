import logging

from ..dataset.schemas import DatasetStats
from ..dataset.stats import stats_table
from ..dataset.store import build_dataset, save_dataset
from ..errors import UsageError
from .context import PipelineContext, stage_run
from .router import CommandRouter

logger = logging.getLogger("ilm.pipeline")

router = CommandRouter()


def gen_data(ctx: PipelineContext, stage: str = "gen-data") -> DatasetStats:
    """Dataset artifacts plus the statistics summary for one seed."""
    with stage_run(ctx, stage) as outputs:
        bundle = build_dataset(ctx.config)
        manifest = save_dataset(bundle, ctx.data_dir, ctx.config)
        outputs.update({name: (ctx.data_dir / name, digest) for name, digest in manifest.files.items()})
        stats = bundle.stats()
    logger.info(f"Dataset: {stats.num_users} users, {stats.num_items} items, "
                f"{stats.item_text_pairs} item-text / {stats.item_item_pairs} item-item / "
                f"{stats.user_item_pairs} user-item pairs")
    return stats


@router.command("gen-data", help="generate (or ingest) datasets and write the statistics summary")
def gen_data_command(args) -> int:
    stats = gen_data(PipelineContext.from_args(args))
    print(stats_table(stats).to_string())
    return 0


@router.command("ingest", help="ingest MovieLens '::' files configured under [data]")
def ingest_command(args) -> int:
    ctx = PipelineContext.from_args(args)
    if ctx.config.data.source != "movielens":
        raise UsageError("ingest needs data.source = \"movielens\"", hint="use gen-data for synthetic datasets")
    stats = gen_data(ctx, stage="ingest")
    print(stats_table(stats).to_string())
    return 0
