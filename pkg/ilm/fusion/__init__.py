from .adapters import (
    MLP_EXPANSION,
    QFORMER_PREFIX,
    MlpAdapter,
    QFormerAdapter,
    build_adapter,
    build_baseline_mlp,
    build_ilm,
    build_ilm_rand,
)
from .model import ADAPTER_PREFIX, FusedModel, Layout, random_text_prompts, text_only_divergence
from .trainer import DevRecord, PhaseTwoResult, phase2_step, phase2_train, sample_batch
