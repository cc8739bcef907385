from .checkpoint import load_module, save_module, state_checksum
from .decoder import TransformerDecoder, decoder_forward
from .losses import (
    binary_cross_entropy_with_logits,
    contrastive_loss,
    cross_entropy_nll,
    log_probabilities,
    symmetric_info_nce,
    token_nll,
)
from .modules import (
    INIT_STD,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    TokenEmbeddingTable,
    TransformerBlock,
    causal_mask,
    combine_masks,
    pad_token_ids,
    padding_mask,
    stack_padded,
)
from .optim import Adafactor, cosine_decay, global_grad_norm, linear_decay
