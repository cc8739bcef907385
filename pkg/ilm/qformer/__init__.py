from .losses import (
    iic_loss,
    itc_loss,
    itg_loss,
    itm_loss,
    itm_negatives,
    pair_cosines,
    query_cosines,
    select_item_rep,
    select_pair_rep,
)
from .model import TEMPERATURE_BOUNDS, QFormer, generation_batch, text_batch
from .trainer import (
    MODE_SOURCES,
    EpochRecord,
    LossRecord,
    PhaseOneData,
    PhaseOneResult,
    loss_summary,
    make_batches,
    mean_itg,
    pair_sources,
    phase1_train,
    step_kinds,
)
