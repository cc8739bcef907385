import itertools

import numpy as np
import pytest

from ilm.backbone import (
    Backbone,
    BeamHypothesis,
    decode_hypotheses,
    fit_prompt,
    generate_beam,
    mean_target_nll,
    pretrain,
    pretraining_examples,
    teacher_forcing_batch,
)
from ilm.dataset.prompts import render_prompts, render_train_prompts
from ilm.dataset.schemas import SequenceExample, SplitExample, UserSequence
from ilm.errors import DimensionError, StorageError, UsageError
from ilm.nn import log_probabilities
from ilm.public.schemas import BackboneConfig

EOS = 2
CONFIG = BackboneConfig(num_layers=1, dim=16, num_heads=2, max_len=48, pretrain_steps=40, batch_size=4,
                        learning_rate=1e-2)


class OracleLM:
    """Fixed random next-token distribution per full context."""

    def __init__(self, vocab_size: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.seed = seed

    def log_prob_row(self, context) -> np.ndarray:
        rng = np.random.default_rng([self.seed] + [int(t) for t in context])
        return log_probabilities(rng.normal(size=self.vocab_size))

    def next_token_log_probs(self, prompt, suffixes):
        return np.stack([self.log_prob_row(list(prompt) + list(s)) for s in suffixes])


def brute_force(oracle: OracleLM, prompt, beam_size: int, max_new: int):
    complete = []
    for length in range(1, max_new + 1):
        for tokens in itertools.product(range(oracle.vocab_size), repeat=length):
            if EOS in tokens[:-1]:
                continue
            if length < max_new and tokens[-1] != EOS:
                continue
            score = sum(oracle.log_prob_row(list(prompt) + list(tokens[:i]))[t] for i, t in enumerate(tokens))
            complete.append(BeamHypothesis(tokens=tokens, score=float(score)))
    complete.sort(key=BeamHypothesis.sort_key)
    return complete[:beam_size]


def greedy(oracle: OracleLM, prompt, max_new: int):
    tokens = []
    for _ in range(max_new):
        token = int(np.argmax(oracle.log_prob_row(list(prompt) + tokens)))
        tokens.append(token)
        if token == EOS:
            break
    return tuple(tokens)


def text_examples(vocab, indexer):
    rng = np.random.default_rng(0)
    train = [UserSequence(user_id=u, items=[u, u + 1, u + 2]) for u in range(3)]
    prompts = {"sequential": render_train_prompts(train, "sequential", vocab, indexer, 3, rng)}
    return pretraining_examples(prompts, vocab)


# ==================== Beam search ====================
@pytest.mark.parametrize("vocab_size,max_new", [(3, 3), (4, 2)])
@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_beam_matches_exhaustive_search(vocab_size, max_new, seed):
    oracle = OracleLM(vocab_size, seed)
    beams = generate_beam(oracle, [1], beam_size=10, max_new=max_new, eos_id=EOS)
    expected = brute_force(oracle, [1], 10, max_new)
    assert [b.tokens for b in beams] == [e.tokens for e in expected]
    assert np.allclose([b.score for b in beams], [e.score for e in expected])


@pytest.mark.parametrize("seed", range(6))
def test_beam_of_one_is_greedy(seed):
    oracle = OracleLM(5, seed)
    beams = generate_beam(oracle, [1], beam_size=1, max_new=4, eos_id=EOS)
    assert len(beams) == 1
    assert beams[0].tokens == greedy(oracle, [1], 4)


def test_beam_output_is_sorted_and_bounded():
    oracle = OracleLM(6, 9)
    beams = generate_beam(oracle, [1], beam_size=4, max_new=3, eos_id=EOS)
    assert len(beams) == 4
    assert beams == sorted(beams, key=BeamHypothesis.sort_key)
    assert all(b.tokens[-1] == EOS or len(b.tokens) == 3 for b in beams)


def test_beam_argument_checks():
    oracle = OracleLM(3)
    with pytest.raises(UsageError):
        generate_beam(oracle, [], beam_size=2)
    with pytest.raises(UsageError):
        generate_beam(oracle, [1], beam_size=0)
    with pytest.raises(UsageError):
        generate_beam(oracle, [1], max_new=0)


def test_decode_hypotheses_drops_specials(vocab, indexer):
    item = vocab.id(indexer.token(2))
    hypotheses = [BeamHypothesis(tokens=(item, vocab.eos_id), score=-1.0)]
    assert decode_hypotheses(hypotheses, vocab) == [indexer.token(2)]


# ==================== Batching ====================
def test_fit_prompt_keeps_bos():
    assert fit_prompt([1, 5, 6, 7, 8], extra=2, max_len=5) == ([1, 7, 8], 2)
    assert fit_prompt([1, 5], extra=1, max_len=5) == ([1, 5], 0)
    with pytest.raises(DimensionError):
        fit_prompt([1, 5], extra=4, max_len=5)


def test_teacher_forcing_masks_only_targets(vocab):
    example = SequenceExample(task="sequential", template_id="sequential-0", user_id=0,
                              prompt_ids=[1, 10, 11], target_ids=[20, EOS])
    batch = teacher_forcing_batch([example], vocab, max_len=16)
    assert batch.input_ids[0].tolist() == [1, 10, 11, 20]
    assert batch.targets[0].tolist() == [10, 11, 20, EOS]
    assert batch.loss_mask[0].tolist() == [False, False, True, True]
    with pytest.raises(UsageError):
        teacher_forcing_batch([example.model_copy(update={"target_ids": []})], vocab, 16)
    with pytest.raises(UsageError):
        teacher_forcing_batch([], vocab, 16)


# ==================== Model ====================
def test_next_token_log_probs_normalized(vocab):
    model = Backbone.from_config(CONFIG, vocab, np.random.default_rng(0))
    rows = model.next_token_log_probs([1, 5, 6], [[7, 8], [9, 10]])
    assert rows.shape == (2, len(vocab))
    assert np.allclose(np.exp(rows).sum(axis=1), 1.0)
    expected = log_probabilities(model.logits([1, 5, 6, 9, 10])[-1])
    assert np.allclose(rows[1], expected, atol=1e-10)


def test_overlong_prompt_is_left_truncated(vocab):
    model = Backbone.from_config(CONFIG, vocab, np.random.default_rng(0))
    prompt = [1] + [5] * 100
    rows = model.next_token_log_probs(prompt, [[6]])
    assert rows.shape == (1, len(vocab))


def test_backbone_checkpoint(vocab, tmp_path):
    model = Backbone.from_config(CONFIG, vocab, np.random.default_rng(0))
    path = tmp_path / "backbone.ilmc"
    content_hash = model.save(path, {"seed": 0})
    loaded, checkpoint = Backbone.load(path, vocab, CONFIG, expected_hash=content_hash)
    assert checkpoint.metadata["kind"] == "backbone"
    assert np.allclose(loaded.logits([1, 5, 6]), model.logits([1, 5, 6]), atol=1e-4)
    reloaded, _ = Backbone.load(path, vocab, CONFIG)
    assert reloaded.checksum() == loaded.checksum()
    with pytest.raises(StorageError):
        Backbone.load(path, vocab, CONFIG, expected_hash="f" * 64)


# ==================== Pretraining ====================
def test_pretraining_examples_are_text_only(vocab, indexer):
    examples = text_examples(vocab, indexer)
    assert len(examples) == 6
    markers = {vocab.item_marker_id, vocab.user_marker_id}
    assert all(not e.slots and not markers & set(e.prompt_ids) for e in examples)


def test_pretraining_rejects_placeholder_prompts(vocab, indexer):
    model = Backbone.from_config(CONFIG, vocab, np.random.default_rng(0))
    with_slots = render_prompts([SplitExample(user_id=0, history=[1], target=2)], "sequential", "seen", vocab,
                                indexer, 3, np.random.default_rng(0))
    with pytest.raises(UsageError):
        pretrain(model, with_slots, CONFIG, np.random.default_rng(0))
    with pytest.raises(UsageError):
        pretrain(model, [], CONFIG, np.random.default_rng(0))


def test_pretraining_lowers_target_nll(vocab, indexer):
    model = Backbone.from_config(CONFIG, vocab, np.random.default_rng(0))
    examples = text_examples(vocab, indexer)
    before = mean_target_nll(model, examples)
    records = pretrain(model, examples, CONFIG, np.random.default_rng(1))
    assert len(records) == CONFIG.pretrain_steps
    assert mean_target_nll(model, examples) < before
