from .beam import BeamHypothesis, LogProbModel, decode_hypotheses, generate_beam
from .model import CHECKPOINT_PREFIX, Backbone, TokenBatch, fit_prompt, teacher_forcing_batch
from .trainer import mean_target_nll, pretrain, pretraining_examples, sequence_loss
