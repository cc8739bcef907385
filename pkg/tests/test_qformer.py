import numpy as np
import pytest
from conftest import randomize

from ilm.dataset.schemas import PairExample
from ilm.errors import DegenerateInputError, DimensionError, UsageError
from ilm.public.schemas import QFormerConfig
from ilm.qformer import (
    TEMPERATURE_BOUNDS,
    PhaseOneData,
    QFormer,
    generation_batch,
    iic_loss,
    itc_loss,
    itg_loss,
    itm_loss,
    itm_negatives,
    loss_summary,
    make_batches,
    mean_itg,
    pair_sources,
    phase1_train,
    query_cosines,
    select_item_rep,
    select_pair_rep,
    step_kinds,
    text_batch,
)

CF_DIM = 4
TEXTS = ["Silent City | space, robots", "Golden Night | romance", "Silent Night | robots", "Golden City | space"]


def small_qformer(vocab, seed=0, num_queries=3):
    return QFormer(cf_dim=CF_DIM, vocab_size=len(vocab), dim=8, num_queries=num_queries, num_layers=1, num_heads=2,
                   max_text_len=12, rng=np.random.default_rng(seed))


def wide_qformer(vocab, seed=11):
    """Randomized weights with a moderate temperature so no gradient is negligible."""
    model = randomize(small_qformer(vocab, seed), np.random.default_rng(seed))
    model.temperature.assign(np.array(0.5))
    return model


def phase_one_data(vocab, eval_pairs=1):
    rng = np.random.default_rng(3)
    pairs = [PairExample(kind="item-text", left=i, text=t, text_ids=vocab.encode(t)) for i, t in enumerate(TEXTS)]
    return PhaseOneData(
        item_text_train=pairs[eval_pairs:],
        item_text_eval=pairs[:eval_pairs],
        item_item=[PairExample(kind="item-item", left=0, right=1), PairExample(kind="item-item", left=2, right=3)],
        user_item=[PairExample(kind="user-item", left=1, right=2), PairExample(kind="user-item", left=3, right=0)],
        item_embeddings=rng.normal(size=(6, CF_DIM)),
        user_embeddings=rng.normal(size=(4, CF_DIM)),
        vocab=vocab,
    )


# ==================== Query tower ====================
def test_item_encoding_shapes(vocab):
    model = small_qformer(vocab)
    rng = np.random.default_rng(0)
    assert model.encode_item(rng.normal(size=CF_DIM)).shape == (3, 8)
    assert model.encode_item(rng.normal(size=(5, CF_DIM))).shape == (5, 3, 8)


def test_item_encoding_rejects_bad_embeddings(vocab):
    model = small_qformer(vocab)
    with pytest.raises(DimensionError):
        model.encode_item(np.zeros(CF_DIM + 1))
    with pytest.raises(DegenerateInputError):
        model.encode_item(np.array([0.0, np.nan, 1.0, 2.0]))


def test_query_bank_is_shared_across_items(vocab):
    model = small_qformer(vocab, num_queries=1)
    first = model.encode_item(np.ones(CF_DIM)).data
    second = model.encode_item(-np.ones(CF_DIM)).data
    assert first.shape == (1, 8)
    assert not np.allclose(first, second)


def test_text_longer_than_tower_is_rejected(vocab):
    model = small_qformer(vocab)
    ids, valid = text_batch([list(range(20))], vocab, max_len=30, prefix_id=vocab.cls_id)
    with pytest.raises(DimensionError):
        model.cls_output(ids, valid)


# ==================== Representation selection ====================
def test_item_selection_prefers_first_on_ties():
    rows = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    index, chosen = select_item_rep(rows, np.array([3.0, 0.0]))
    assert index == 0
    assert np.array_equal(chosen, rows[0])
    assert np.allclose(query_cosines(rows, np.array([0.0, 1.0])), [0.0, 0.0, 1.0])


def test_pair_selection_lexicographic_ties():
    left = np.array([[0.0, 1.0], [1.0, 0.0]])
    right = np.array([[1.0, 0.0], [1.0, 0.0]])
    k, l, h1, h2 = select_pair_rep(left, right)
    assert (k, l) == (1, 0)
    assert select_pair_rep(right, right)[:2] == (0, 0)


def first_best_row(H, h):
    best, best_cos, ties = None, None, 0
    for i in range(len(H)):
        cos = float((H[i] * h).sum() / (np.sqrt((H[i] * H[i]).sum()) * np.sqrt((h * h).sum())))
        if best is None or cos > best_cos:
            best, best_cos, ties = i, cos, 1
        elif cos == best_cos:
            ties += 1
    return best, ties


def first_best_pair(H1, H2):
    best, best_cos, ties = None, None, 0
    for k in range(len(H1)):
        for l in range(len(H2)):
            a, b = H1[k], H2[l]
            cos = float((a * b).sum() / (np.sqrt((a * a).sum()) * np.sqrt((b * b).sum())))
            if best is None or cos > best_cos:
                best, best_cos, ties = (k, l), cos, 1
            elif cos == best_cos:
                ties += 1
    return best, ties


def rows_with_duplicates(rng, n, d):
    rows = rng.normal(size=(n, d))
    if n > 1:
        for _ in range(int(rng.integers(0, n))):
            source, target = rng.choice(n, size=2, replace=False)
            rows[target] = rows[source]
    return rows


def test_item_selection_matches_nested_loop_over_random_instances():
    rng = np.random.default_rng(2024)
    tied = 0
    for _ in range(1000):
        n, d = int(rng.integers(1, 9)), int(rng.integers(2, 6))
        H = rows_with_duplicates(rng, n, d)
        if n > 1 and rng.random() < 0.6:
            source, target = rng.choice(n, size=2, replace=False)
            H[target] = H[source]
            h = H[source] * rng.uniform(0.5, 2.0)
        else:
            h = rng.normal(size=d)
        expected, ties = first_best_row(H, h)
        index, chosen = select_item_rep(H, h)
        assert index == expected
        assert np.array_equal(chosen, H[expected])
        tied += ties > 1
    assert tied > 100


def test_pair_selection_matches_nested_loop_over_random_instances():
    rng = np.random.default_rng(2025)
    tied = 0
    for _ in range(1000):
        n1, n2, d = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(2, 6))
        H1, H2 = rows_with_duplicates(rng, n1, d), rows_with_duplicates(rng, n2, d)
        if rng.random() < 0.6:
            k, l = int(rng.integers(n1)), int(rng.integers(n2))
            H2[l] = H1[k] * rng.uniform(0.5, 2.0)
            if n1 > 1:
                H1[(k + 1 + int(rng.integers(n1 - 1))) % n1] = H1[k]
        expected, ties = first_best_pair(H1, H2)
        k, l, h1, h2 = select_pair_rep(H1, H2)
        assert (k, l) == expected
        assert np.array_equal(h1, H1[k]) and np.array_equal(h2, H2[l])
        tied += ties > 1
    assert tied > 100


def test_selection_rejects_degenerate_rows():
    with pytest.raises(DegenerateInputError):
        select_item_rep(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        select_item_rep(np.zeros((0, 2)), np.array([1.0, 0.0]))
    with pytest.raises(DimensionError):
        select_pair_rep(np.ones((2, 2)), np.ones((2, 3)))


# ==================== Objectives ====================
def test_itm_negatives_never_match_themselves():
    rng = np.random.default_rng(0)
    for batch in range(2, 9):
        negatives = itm_negatives(batch, rng)
        assert np.all(negatives != np.arange(batch))
        assert negatives.min() >= 0 and negatives.max() < batch
    with pytest.raises(UsageError):
        itm_negatives(1, rng)


def test_generation_batch_shifts_targets(vocab):
    tokens = vocab.encode("Golden Night")
    inputs, targets, valid = generation_batch([tokens], vocab, max_len=12)
    assert inputs[0].tolist() == [vocab.bos_id] + tokens
    assert targets[0].tolist() == tokens + [vocab.eos_id]
    assert valid.all()
    with pytest.raises(DegenerateInputError):
        generation_batch([[]], vocab, max_len=12)


def test_itc_gradients(vocab, check_gradients):
    model = wide_qformer(vocab)
    data = phase_one_data(vocab, eval_pairs=0)
    ids, valid = text_batch([p.text_ids for p in data.item_text_train[:3]], vocab, 12, vocab.cls_id)
    embeddings = data.item_embeddings[:3]
    params = [model.query_bank, model.input_projection.weight, model.text_embeddings.positions, model.temperature]
    check_gradients(lambda: itc_loss(model, embeddings, ids, valid), params, tolerance=1e-3)


def test_iic_gradients(vocab, check_gradients):
    model = wide_qformer(vocab)
    rng = np.random.default_rng(4)
    left, right = rng.normal(size=(3, CF_DIM)), rng.normal(size=(3, CF_DIM))
    params = [model.query_bank, model.input_projection.weight, model.temperature]
    check_gradients(lambda: iic_loss(model, left, right), params, tolerance=1e-3)


def test_itg_gradients(vocab, check_gradients):
    model = wide_qformer(vocab)
    data = phase_one_data(vocab, eval_pairs=0)
    inputs, targets, valid = generation_batch([p.text_ids for p in data.item_text_train[:2]], vocab, 12)
    embeddings = data.item_embeddings[:2]
    params = [model.query_bank, model.input_projection.weight, model.lm_head.bias]
    check_gradients(lambda: itg_loss(model, embeddings, inputs, targets, valid), params, tolerance=1e-3)


def test_itm_gradients(vocab, check_gradients):
    model = wide_qformer(vocab)
    data = phase_one_data(vocab, eval_pairs=0)
    ids, valid = text_batch([p.text_ids for p in data.item_text_train[:3]], vocab, 12, vocab.cls_id)
    embeddings = data.item_embeddings[:3]
    params = [model.query_bank, model.itm_head.weight, model.text_layers[0].cross_attention.value.weight]
    check_gradients(lambda: itm_loss(model, embeddings, ids, valid, np.random.default_rng(0)), params,
                    tolerance=1e-3)


def test_itc_loss_at_chance_for_identical_items(vocab):
    model = small_qformer(vocab)
    data = phase_one_data(vocab, eval_pairs=0)
    ids, valid = text_batch([data.item_text_train[0].text_ids] * 3, vocab, 12, vocab.cls_id)
    loss = itc_loss(model, np.ones((3, CF_DIM)), ids, valid).item()
    assert loss == pytest.approx(np.log(3.0), rel=1e-6)


# ==================== Training loop ====================
def test_batches_cover_every_index_without_singletons():
    batches = make_batches(5, 2, np.random.default_rng(0))
    assert [len(b) for b in batches] == [2, 3]
    assert sorted(np.concatenate(batches).tolist()) == list(range(5))
    assert [len(b) for b in make_batches(1, 4, np.random.default_rng(0))] == [1]


def test_step_kinds_alternate_only_with_pairs():
    assert step_kinds(4, True) == ["item-text", "pair", "item-text", "pair"]
    assert step_kinds(3, False) == ["item-text"] * 3


def test_mode_selects_pair_sources(vocab):
    data = phase_one_data(vocab)
    assert [kind for kind, _ in pair_sources("IT", data)] == []
    assert [kind for kind, _ in pair_sources("IT-II", data)] == ["item-item"]
    assert [kind for kind, _ in pair_sources("IT-II-UI", data)] == ["item-item", "user-item"]
    with pytest.raises(UsageError):
        pair_sources("II", data)


def test_phase_one_records_losses_and_gap(vocab):
    model = small_qformer(vocab)
    data = phase_one_data(vocab)
    config = QFormerConfig(dim=8, num_queries=3, num_layers=1, num_heads=2, max_text_len=12, epochs=2, batch_size=3,
                           mode="IT-II-UI")
    result = phase1_train(model, data, config, np.random.default_rng(0))
    names = {record.loss for record in result.losses}
    assert names == {"itc", "itg", "itm", "iic", "total"}
    assert [record.step for record in result.losses if record.loss == "total"] == [0, 1, 2, 3]
    assert len(result.epochs) == 2
    last = result.epochs[-1]
    assert last.gap == pytest.approx(last.eval_itg - last.train_itg)
    low, high = TEMPERATURE_BOUNDS
    assert low <= model.temperature.item() <= high
    assert set(loss_summary(result.losses)) == names


def test_phase_one_reduces_generation_loss(vocab):
    model = small_qformer(vocab)
    data = phase_one_data(vocab, eval_pairs=0)
    config = QFormerConfig(dim=8, num_queries=3, num_layers=1, num_heads=2, max_text_len=12, epochs=12, batch_size=4,
                           mode="IT", learning_rate=2e-2)
    before = mean_itg(model, data.item_text_train, data, 12, 4)
    result = phase1_train(model, data, config, np.random.default_rng(0))
    after = mean_itg(model, data.item_text_train, data, 12, 4)
    assert after < before
    assert result.epochs[-1].eval_itg is None and result.epochs[-1].gap is None


def test_phase_one_needs_two_item_text_pairs(vocab):
    data = phase_one_data(vocab, eval_pairs=3)
    with pytest.raises(UsageError):
        phase1_train(small_qformer(vocab), data, QFormerConfig(dim=8, num_heads=2), np.random.default_rng(0))
