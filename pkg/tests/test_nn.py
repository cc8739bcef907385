import math

import numpy as np
import pytest
from conftest import randomize

from ilm.autograd import Tensor, backward, tsum
from ilm.errors import DegenerateInputError, DimensionError, UsageError, VocabularyError
from ilm.nn import (
    Adafactor,
    Linear,
    MultiHeadAttention,
    Parameter,
    TokenEmbeddingTable,
    TransformerDecoder,
    binary_cross_entropy_with_logits,
    contrastive_loss,
    cosine_decay,
    cross_entropy_nll,
    decoder_forward,
    linear_decay,
    load_module,
    pad_token_ids,
    padding_mask,
    save_module,
    state_checksum,
    symmetric_info_nce,
    token_nll,
)


def tiny_decoder(seed: int = 0) -> TransformerDecoder:
    rng = np.random.default_rng(seed)
    return TransformerDecoder(vocab_size=7, dim=4, num_layers=1, num_heads=2, max_len=6, rng=rng)


def test_attention_heads_must_divide_width():
    with pytest.raises(DimensionError):
        MultiHeadAttention(6, 4, np.random.default_rng(0))


def test_linear_checks_input_width():
    layer = Linear(3, 2, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        layer(Tensor(np.ones((2, 4))))


def test_embedding_rejects_out_of_range_token():
    table = TokenEmbeddingTable(5, 4, 8, np.random.default_rng(0))
    with pytest.raises(VocabularyError):
        table.embed_tokens([1, 5])
    with pytest.raises(DimensionError):
        table(np.zeros(9, dtype=np.int64))


def test_decoder_is_causal():
    decoder = tiny_decoder()
    first = decoder(np.array([1, 3, 4, 5])).data
    second = decoder(np.array([1, 3, 4, 6])).data
    assert np.allclose(first[:3], second[:3], rtol=0.0, atol=1e-12)
    assert not np.allclose(first[3], second[3])


def test_right_padding_does_not_change_real_positions():
    decoder = tiny_decoder()
    ids, valid = pad_token_ids([[1, 3, 4], [1, 2, 5, 6, 3]], pad_id=0)
    batched = decoder(ids, valid).data
    alone = decoder(np.array([1, 3, 4])).data
    assert np.allclose(batched[0, :3], alone, rtol=0.0, atol=1e-12)


def test_decoder_forward_accepts_ids_or_embeddings():
    decoder = tiny_decoder()
    ids = np.array([1, 3, 4, 2])
    from_ids = decoder_forward(decoder, ids).data
    from_embeddings = decoder_forward(decoder, embeddings=decoder.embed_tokens(ids)).data
    assert from_ids.shape == (4, 7)
    assert np.array_equal(from_ids, from_embeddings)
    with pytest.raises(UsageError):
        decoder_forward(decoder)
    with pytest.raises(UsageError):
        decoder_forward(decoder, ids, embeddings=decoder.embed_tokens(ids))
    with pytest.raises(DimensionError):
        decoder_forward(decoder, embeddings=Tensor(np.zeros((3, 5))))


def test_padding_mask():
    assert padding_mask([1, 3], 3).tolist() == [[True, False, False], [True, True, True]]


def test_decoder_gradients_match_finite_differences(check_gradients):
    rng = np.random.default_rng(5)
    decoder = randomize(tiny_decoder(), rng)
    ids = np.array([[1, 3, 4, 2], [2, 5, 6, 1]])
    targets = np.array([[3, 4, 2, 0], [5, 6, 1, 0]])
    ignore = np.array([[False, False, False, True], [False, False, False, True]])
    params = [decoder.embeddings.tokens, decoder.blocks[0].self_attention.query.weight,
              decoder.blocks[0].feed_forward.up.weight, decoder.lm_head.weight]
    check_gradients(lambda: cross_entropy_nll(decoder(ids), targets, ignore), params, tolerance=1e-3)


def test_cross_entropy_matches_token_nll():
    logits = np.random.default_rng(1).normal(size=(2, 3, 5))
    targets = np.array([[0, 1, 4], [2, 2, 3]])
    mask = np.array([[False, True, False], [False, False, True]])
    loss = cross_entropy_nll(Tensor(logits), targets, ignore_mask=mask).item()
    per_token = token_nll(logits, targets)
    assert loss == pytest.approx(per_token[~mask].mean(), rel=1e-12)


def test_cross_entropy_rejects_bad_targets():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(VocabularyError):
        cross_entropy_nll(logits, [0, 3])
    with pytest.raises(DegenerateInputError):
        cross_entropy_nll(logits, [0, 1], ignore_mask=[True, True])


def test_info_nce_two_by_two_closed_form():
    expected = -math.log(math.e / (math.e + 1.0))
    loss = symmetric_info_nce(Tensor(np.eye(2)), 1.0).item()
    assert loss == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.3133, abs=1e-4)


def test_contrastive_loss_orthogonal_pairs_closed_form():
    rows = Tensor(np.array([[2.0, 0.0], [0.0, 0.5]]))
    loss = contrastive_loss(rows, rows, 1.0).item()
    assert loss == pytest.approx(-math.log(math.e / (math.e + 1.0)), abs=1e-12)


def test_contrastive_loss_gradients(check_gradients):
    rng = np.random.default_rng(3)
    left = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    right = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    temperature = Tensor(np.array(0.5), requires_grad=True)
    check_gradients(lambda: contrastive_loss(left, right, temperature), [left, right, temperature])


def test_binary_cross_entropy_value():
    logits = Tensor(np.array([0.0, 2.0]))
    loss = binary_cross_entropy_with_logits(logits, [1.0, 0.0]).item()
    expected = 0.5 * (math.log(2.0) + math.log(1.0 + math.exp(2.0)))
    assert loss == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DimensionError):
        binary_cross_entropy_with_logits(logits, [1.0])


def test_adafactor_minimizes_quadratic():
    rng = np.random.default_rng(0)
    matrix = Parameter(rng.normal(size=(4, 3)))
    vector = Parameter(rng.normal(size=3))
    target = rng.normal(size=(4, 3))

    def loss():
        diff = matrix - target
        return tsum(diff * diff) + tsum(vector * vector)

    optimizer = Adafactor([matrix, vector])
    start = loss().item()
    for step in range(300):
        optimizer.step(backward(loss(), [matrix, vector]), lr=0.05)
    assert loss().item() < 0.05 * start


def test_adafactor_skips_frozen_parameters():
    frozen = Parameter(np.ones(2), requires_grad=False)
    live = Parameter(np.ones(2))
    optimizer = Adafactor([frozen, live])
    assert optimizer.params == [live]
    optimizer.step(backward(tsum(live * frozen), [live]), lr=0.1)
    assert np.array_equal(frozen.data, np.ones(2))
    assert not np.array_equal(live.data, np.ones(2))


def test_schedules():
    assert cosine_decay(1.0, 0, 100) == pytest.approx(1.0)
    assert cosine_decay(1.0, 50, 100) == pytest.approx(0.5)
    assert cosine_decay(1.0, 100, 100) == pytest.approx(0.0, abs=1e-12)
    assert linear_decay(1.0, 25, 100) == pytest.approx(0.75)
    assert linear_decay(1.0, 0, 100, warmup_steps=10) == pytest.approx(0.1)
    assert linear_decay(2.0, 100, 100, final_ratio=0.1) == pytest.approx(0.2)


def test_module_checkpoint_restores_state(tmp_path):
    source = tiny_decoder(seed=1).astype(np.float32)
    path = tmp_path / "decoder.ilmc"
    save_module(source, path, {"kind": "test"}, prefix="decoder.")
    target = tiny_decoder(seed=2).astype(np.float32)
    assert state_checksum(target) != state_checksum(source)
    checkpoint = load_module(target, path, prefix="decoder.")
    assert checkpoint.metadata["kind"] == "test"
    assert state_checksum(target) == state_checksum(source)


def test_load_state_dict_strict_mismatch():
    decoder = tiny_decoder()
    state = decoder.state_dict()
    state.pop("lm_head.bias")
    with pytest.raises(UsageError):
        decoder.load_state_dict(state)


def test_parameter_assign_checks_shape():
    p = Parameter(np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        p.assign(np.zeros(3))
