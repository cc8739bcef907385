import logging

from ..backbone import Backbone, pretrain, pretraining_examples
from ..cf import InteractionMatrix, export_embeddings, train_mf
from ..dataset.splits import mf_training_triples
from ..evaluation import FrozenCheck
from ..fusion import QFORMER_PREFIX, PhaseTwoResult, phase2_train, random_text_prompts, text_only_divergence
from ..nn import save_module
from ..qformer import PhaseOneData, PhaseOneResult, QFormer, phase1_train
from ..services.file_handler import write_jsonl
from ..utils.seeding import substream
from .artifacts import build_fused, dev_selection_examples, load_backbone, load_cf, load_data, load_trained
from .context import (
    BACKBONE_CHECKPOINT,
    MF_CHECKPOINT,
    PHASE1_CHECKPOINT,
    PHASE2_CHECKPOINT,
    PipelineContext,
    stage_run,
)
from .router import ADAPTER_ARGUMENT, CommandRouter, argument

logger = logging.getLogger("ilm.pipeline")

router = CommandRouter()

FROZEN_CHECK_PROMPTS = 100


# ==================== train-mf ====================
def run_train_mf(ctx: PipelineContext) -> str:
    bundle, manifest_hash = load_data(ctx)
    users, items, weights = mf_training_triples(bundle.split, bundle.interactions, ctx.config.mf.confidence)
    interactions = InteractionMatrix.from_triples(users, items, weights, bundle.num_users, bundle.num_items)
    with stage_run(ctx, "train-mf", parent_hash=manifest_hash) as outputs:
        model = train_mf(interactions, ctx.config.mf, substream(ctx.seed, "mf"), ctx.show_progress)
        path = ctx.mf_dir / MF_CHECKPOINT
        digest = export_embeddings(model, path, {"config_hash": ctx.config_hash, "parent_hash": manifest_hash,
                                                 "confidence": ctx.config.mf.confidence})
        outputs[MF_CHECKPOINT] = (path, digest)
    return digest


@router.command("train-mf", help="factorize train-split interactions with iALS and export CF embeddings")
def train_mf_command(args) -> int:
    digest = run_train_mf(PipelineContext.from_args(args))
    print(f"cf embeddings: sha256={digest}")
    return 0


# ==================== pretrain-backbone ====================
def run_pretrain_backbone(ctx: PipelineContext) -> str:
    bundle, manifest_hash = load_data(ctx)
    examples = pretraining_examples(bundle.train_prompts, bundle.vocab)
    with stage_run(ctx, "pretrain-backbone", parent_hash=manifest_hash) as outputs:
        model = Backbone.from_config(ctx.config.backbone, bundle.vocab, substream(ctx.seed, "backbone-init"))
        model.astype(ctx.dtype)
        losses = pretrain(model, examples, ctx.config.backbone, substream(ctx.seed, "pretrain"), ctx.show_progress)
        path = ctx.backbone_dir / BACKBONE_CHECKPOINT
        digest = model.save(path, {"config_hash": ctx.config_hash, "parent_hash": manifest_hash,
                                   "steps": ctx.config.backbone.pretrain_steps})
        outputs[BACKBONE_CHECKPOINT] = (path, digest)
        outputs["pretrain_losses.jsonl"] = (ctx.backbone_dir / "pretrain_losses.jsonl",
                                            write_jsonl(ctx.backbone_dir / "pretrain_losses.jsonl", losses))
    return digest


@router.command("pretrain-backbone", help="pretrain the decoder backbone on text-only recommendation prompts")
def pretrain_backbone_command(args) -> int:
    digest = run_pretrain_backbone(PipelineContext.from_args(args))
    print(f"backbone: sha256={digest}")
    return 0


# ==================== phase1 ====================
def run_phase1(ctx: PipelineContext) -> PhaseOneResult:
    bundle, _ = load_data(ctx)
    cf = load_cf(ctx)
    data = PhaseOneData(item_text_train=bundle.item_text_train, item_text_eval=bundle.item_text_eval,
                        item_item=bundle.item_item, user_item=bundle.user_item, item_embeddings=cf.items,
                        user_embeddings=cf.users, vocab=bundle.vocab)
    config = ctx.config.qformer
    with stage_run(ctx, "phase1", parent_hash=cf.content_hash) as outputs:
        model = QFormer.from_config(config, cf.dim, len(bundle.vocab), substream(ctx.seed, "qformer-init"))
        model.astype(ctx.dtype)
        result = phase1_train(model, data, config, substream(ctx.seed, "phase1"), ctx.show_progress)
        directory = ctx.phase1_dir
        digest = save_module(model, directory / PHASE1_CHECKPOINT, {
            "kind": "qformer", "config_hash": ctx.config_hash, "parent_hash": cf.content_hash,
            "mode": config.mode, "num_queries": config.num_queries, "epochs": config.epochs,
        }, prefix=QFORMER_PREFIX)
        outputs[PHASE1_CHECKPOINT] = (directory / PHASE1_CHECKPOINT, digest)
        outputs["losses.jsonl"] = (directory / "losses.jsonl", write_jsonl(directory / "losses.jsonl", result.losses))
        outputs["epochs.jsonl"] = (directory / "epochs.jsonl", write_jsonl(directory / "epochs.jsonl", result.epochs))
    return result


@router.command("phase1", help="train the Q-Former on item-text and pair contrastive losses")
def phase1_command(args) -> int:
    result = run_phase1(PipelineContext.from_args(args))
    for record in result.epochs:
        print(f"epoch {record.epoch}: train_itg={record.train_itg:.4f} eval_itg={record.eval_itg}")
    return 0


# ==================== phase2 ====================
def run_phase2(ctx: PipelineContext, adapter: str) -> PhaseTwoResult:
    setup = build_fused(ctx, adapter)
    bundle, model = setup.bundle, setup.model
    pools = {task: bundle.train_prompts.get(task, []) for task in ctx.config.phase2.tasks}
    dev = dev_selection_examples(ctx, bundle)
    with stage_run(ctx, "phase2", adapter=adapter, parent_hash=setup.phase1_hash or model.backbone_hash) as outputs:
        result = phase2_train(model, pools, dev, bundle.indexer, ctx.config.phase2, ctx.config.eval, setup.rng,
                              ctx.show_progress)
        directory = ctx.phase2_dir(adapter)
        digest = model.save_trainable(directory / PHASE2_CHECKPOINT, {
            "config_hash": ctx.config_hash, "phase1_hash": setup.phase1_hash, "best_step": result.best_step,
        })
        outputs[PHASE2_CHECKPOINT] = (directory / PHASE2_CHECKPOINT, digest)
        outputs["losses.jsonl"] = (directory / "losses.jsonl", write_jsonl(directory / "losses.jsonl", result.losses))
        outputs["dev.jsonl"] = (directory / "dev.jsonl", write_jsonl(directory / "dev.jsonl", result.dev))
    return result


@router.command("phase2", help="train the adapter into the frozen backbone", arguments=[ADAPTER_ARGUMENT])
def phase2_command(args) -> int:
    ctx = PipelineContext.from_args(args)
    adapter = ctx.adapter(args.adapter)
    result = run_phase2(ctx, adapter)
    print(f"phase2 {adapter}: best_step={result.best_step} dev_ndcg@10={result.best_ndcg}")
    return 0


# ==================== verify-frozen ====================
def run_verify_frozen(ctx: PipelineContext, adapter: str, prompts: int = FROZEN_CHECK_PROMPTS) -> FrozenCheck:
    """Text-only prompts through the trained fused model against a freshly loaded backbone."""
    setup = load_trained(ctx, adapter)
    reference, _ = load_backbone(ctx, setup.bundle)
    samples = random_text_prompts(setup.bundle.vocab, prompts, reference.max_len, substream(ctx.seed, "eval"))
    with stage_run(ctx, "verify-frozen", adapter=adapter, parent_hash=setup.model.backbone_hash) as outputs:
        diff = text_only_divergence(setup.model, reference, samples)
        checksum = setup.model.backbone.checksum()
        check = FrozenCheck(adapter=adapter, seed=ctx.seed, prompts=len(samples), max_abs_logit_diff=diff,
                            backbone_checksum=checksum, unchanged=checksum == reference.checksum() and diff == 0.0)
        path = ctx.reports_dir / f"frozen_{adapter}.jsonl"
        outputs[path.name] = (path, write_jsonl(path, [check]))
    if not check.unchanged:
        logger.error(f"Frozen backbone check failed for {adapter}: max |diff|={diff:.3e}")
    return check


@router.command("verify-frozen", help="compare the fused model with the standalone backbone on text-only prompts",
                arguments=[ADAPTER_ARGUMENT,
                           argument("--prompts", type=int, default=FROZEN_CHECK_PROMPTS,
                                    help="number of random text-only prompts")])
def verify_frozen_command(args) -> int:
    ctx = PipelineContext.from_args(args)
    check = run_verify_frozen(ctx, ctx.adapter(args.adapter), args.prompts)
    print(f"max |logit diff| = {check.max_abs_logit_diff:.3e} over {check.prompts} prompts; "
          f"backbone sha256={check.backbone_checksum}; unchanged={check.unchanged}")
    return 0 if check.unchanged else 1
