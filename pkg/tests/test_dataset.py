import numpy as np
import pytest

from ilm.dataset.movielens import parse_movielens, parse_ratings_line
from ilm.dataset.pairs import build_item_item_pairs, build_item_text_pairs, build_user_item_pairs, holdout_pairs
from ilm.dataset.prompts import leaked_targets, render_prompts, render_train_prompts, to_text_only
from ilm.dataset.schemas import Catalog, Interaction, ItemRecord, SplitExample, UserSequence
from ilm.dataset.splits import mf_training_triples, split_leave_last
from ilm.dataset.stats import stats_table
from ilm.dataset.store import build_dataset, load_dataset, save_dataset
from ilm.dataset.synthetic import synth_generate, within_cluster_rate
from ilm.dataset.vocab import SPECIAL_TOKENS, Vocabulary, tokenize
from ilm.errors import CatalogError, DependencyError, ParseError, TemplateError, UsageError, VocabularyError
from ilm.public.schemas import DataConfig, RunConfig
from ilm.template.prompt_templates import TEMPLATE_DEFINITIONS
from ilm.utils.template_utils import check_template_fields, get_templates, render_template, strip_placeholders

RATINGS = "2::20::4::100\n1::10::5::300\n1::30::3::200\n10::10::2::50\n"
MOVIES = "10::Alpha (1999)::Drama|Comedy\n20::Beta (2000)::(no genres listed)\n30::Gamma (2001)::Action\n" \
         "40::Unrated (2002)::Horror\n"


def write_movielens(tmp_path, ratings=RATINGS, movies=MOVIES):
    ratings_path = tmp_path / "ratings.dat"
    movies_path = tmp_path / "movies.dat"
    ratings_path.write_text(ratings, encoding="utf-8")
    movies_path.write_text(movies, encoding="utf-8")
    return ratings_path, movies_path


# ==================== Synthetic data ====================
def test_synthetic_transitions_stay_in_cluster():
    config = DataConfig(num_users=1000, num_items=400, num_clusters=4, min_length=10, max_length=12)
    catalog, sequences, interactions = synth_generate(config, np.random.default_rng(0))
    assert within_cluster_rate(catalog, sequences) == pytest.approx(0.9, abs=0.02)
    assert all(len(set(seq.items)) == len(seq.items) for seq in sequences)
    assert len(interactions) == sum(len(seq.items) for seq in sequences)


def test_synthetic_text_sparsity():
    config = DataConfig(num_users=5, num_items=40, text_sparsity=0.25)
    catalog, _, _ = synth_generate(config, np.random.default_rng(1))
    assert sum(1 for item in catalog.items if not item.text) == 10


def test_synthetic_rejects_impossible_shapes():
    with pytest.raises(UsageError):
        synth_generate(DataConfig(num_items=3, num_clusters=4, min_length=1, max_length=2), np.random.default_rng(0))
    with pytest.raises(UsageError):
        synth_generate(DataConfig(num_items=4, num_clusters=2, min_length=5, max_length=6), np.random.default_rng(0))


def test_default_dataset_stats():
    bundle = build_dataset(RunConfig())
    stats = bundle.stats()
    assert stats.num_users == 200
    assert stats.num_items == 50
    assert stats.items_without_text == 25
    assert stats.item_text_pairs == 25
    assert stats.dev_examples == stats.test_examples == 200
    assert stats_table(stats).loc["num_items", "count"] == 50


# ==================== Splits ====================
def test_leave_last_split():
    split = split_leave_last([UserSequence(user_id=0, items=[5, 6, 7, 8]), UserSequence(user_id=1, items=[1, 2])])
    assert split.train == [UserSequence(user_id=0, items=[5, 6])]
    assert split.dev == [SplitExample(user_id=0, history=[5, 6], target=7)]
    assert split.test == [SplitExample(user_id=0, history=[5, 6, 7], target=8)]
    assert split.excluded_users == [1]


def test_factorization_triples_never_see_held_out_items():
    sequences = [UserSequence(user_id=0, items=[5, 6, 7, 8]), UserSequence(user_id=1, items=[1, 2])]
    interactions = [Interaction(user_id=s.user_id, item_id=i, weight=2.0, timestamp=t)
                    for s in sequences for t, i in enumerate(s.items)]
    split = split_leave_last(sequences)
    users, items, weights = mf_training_triples(split, interactions)
    assert list(zip(users, items)) == [(0, 5), (0, 6), (1, 1), (1, 2)]
    assert weights == [1.0] * 4
    _, _, rated = mf_training_triples(split, interactions, confidence="rating")
    assert rated == [2.0] * 4


def test_train_prompts_do_not_leak_held_out_targets(tiny_config):
    bundle = build_dataset(tiny_config)
    for task, examples in bundle.train_prompts.items():
        if task == "description":
            continue
        assert leaked_targets(examples, bundle.split.dev + bundle.split.test) == []


# ==================== Pairs ====================
def test_pair_builders():
    train = [UserSequence(user_id=0, items=[1, 2, 1, 2]), UserSequence(user_id=1, items=[2, 3])]
    item_item = build_item_item_pairs(train)
    assert [(p.left, p.right) for p in item_item] == [(1, 2), (2, 1), (2, 3)]
    user_item = build_user_item_pairs(train)
    assert [(p.left, p.right) for p in user_item] == [(0, 1), (0, 2), (1, 2), (1, 3)]
    catalog = Catalog(items=[ItemRecord(item_id=0, raw_id="a", title="Dark City", tags=["noir"]),
                             ItemRecord(item_id=1, raw_id="b")], users=[])
    pairs = build_item_text_pairs(catalog)
    assert [(p.left, p.text) for p in pairs] == [(0, "Dark City | noir")]


def test_holdout_keeps_one_training_pair():
    pairs = build_user_item_pairs([UserSequence(user_id=0, items=[1, 2])])
    train, held = holdout_pairs(pairs, 0.99, np.random.default_rng(0))
    assert len(train) == 1 and len(held) == 1
    assert holdout_pairs(pairs, 0.0, np.random.default_rng(0)) == (pairs, [])


# ==================== Vocabulary ====================
def test_special_tokens_come_first(vocab):
    assert vocab.tokens[:len(SPECIAL_TOKENS)] == list(SPECIAL_TOKENS)
    assert (vocab.pad_id, vocab.bos_id, vocab.eos_id) == (0, 1, 2)


def test_entity_tokens_are_atomic(vocab, indexer):
    assert tokenize(f"{indexer.token(3)} [ITEM] Silent, City") == [indexer.token(3), "[ITEM]", "silent", ",", "city"]
    ids = vocab.encode(f"{indexer.token(3)} user_2")
    assert len(ids) == 2
    assert vocab.decode(ids) == f"{indexer.token(3)} user_2"


def test_unknown_words(vocab):
    with pytest.raises(VocabularyError):
        vocab.encode("zeppelin")
    assert vocab.encode("zeppelin", strict=False) == [vocab.id("[UNK]")]
    with pytest.raises(VocabularyError):
        vocab.token(len(vocab))


def test_vocabulary_lines_restore_ids(vocab):
    restored = Vocabulary.from_lines(vocab.to_lines())
    assert restored.tokens == vocab.tokens
    with pytest.raises(VocabularyError):
        Vocabulary(list(SPECIAL_TOKENS) + ["a", "a"])
    with pytest.raises(VocabularyError):
        Vocabulary(["a"])


# ==================== Templates and prompts ====================
@pytest.mark.parametrize("task", ["sequential", "straightforward"])
def test_ten_training_templates_and_one_unseen(task):
    seen = get_templates(task, "seen")
    unseen = get_templates(task, "unseen")
    assert len(seen) == 10 and len(unseen) == 1
    assert seen[3][0] == f"{task}-3"
    assert unseen[0][0] == f"{task}-unseen-0"
    assert not {text for _, text in seen} & {text for _, text in unseen}


def test_unknown_template_names():
    with pytest.raises(TemplateError):
        get_templates("rating", "seen")
    with pytest.raises(TemplateError):
        get_templates("sequential", "novel")


@pytest.mark.parametrize("task", ["sequential", "straightforward", "description"])
def test_templates_use_only_declared_fields(task):
    check_template_fields(task)


def test_undeclared_template_field_is_rejected(monkeypatch):
    definition = {"fields": ["user"], "train": ["recommend to {user} after {history}"], "unseen": []}
    monkeypatch.setitem(TEMPLATE_DEFINITIONS, "straightforward", definition)
    with pytest.raises(TemplateError) as excinfo:
        get_templates("straightforward", "seen")
    assert "history" in str(excinfo.value)


def test_render_template_binds_slots(vocab, indexer):
    ids, slots = render_template("user {user} liked {history} .", {"user": 2, "history": [4, 1]}, vocab, indexer)
    assert [(s.kind, s.entity_id) for s in slots] == [("user", 2), ("item", 4), ("item", 1)]
    for slot in slots:
        marker = vocab.user_marker_id if slot.kind == "user" else vocab.item_marker_id
        assert ids[slot.position] == marker
    assert vocab.id(",") in ids
    assert strip_placeholders(ids, vocab) == vocab.encode(f"user user_2 liked {indexer.token(4)} , "
                                                          f"{indexer.token(1)} .")
    with pytest.raises(TemplateError):
        render_template("user {user} likes {item}", {"user": 2}, vocab, indexer)


def test_sequential_prompt_truncates_history(vocab, indexer):
    example = SplitExample(user_id=1, history=[0, 1, 2, 3, 4], target=5)
    rendered = render_prompts([example], "sequential", "unseen", vocab, indexer, history_length=3,
                              rng=np.random.default_rng(0))[0]
    assert rendered.template_id == "sequential-unseen-0"
    assert rendered.prompt_ids[0] == vocab.bos_id
    assert [s.entity_id for s in rendered.slots if s.kind == "item"] == [2, 3, 4]
    assert all(rendered.prompt_ids[s.position] in (vocab.item_marker_id, vocab.user_marker_id) for s in rendered.slots)
    assert rendered.target_ids == [vocab.id(indexer.token(5)), vocab.eos_id]
    plain = to_text_only(rendered, vocab)
    assert plain.slots == [] and len(plain.prompt_ids) == len(rendered.prompt_ids) - 4


def test_train_prompt_counts(vocab, indexer):
    train = [UserSequence(user_id=0, items=[1, 2, 3]), UserSequence(user_id=1, items=[4])]
    rng = np.random.default_rng(0)
    sequential = render_train_prompts(train, "sequential", vocab, indexer, 3, rng)
    straightforward = render_train_prompts(train, "straightforward", vocab, indexer, 3, rng)
    assert [e.target_item for e in sequential] == [2, 3]
    assert [e.target_item for e in straightforward] == [1, 2, 3, 4]
    with pytest.raises(UsageError):
        render_train_prompts(train, "description", vocab, indexer, 3, rng)


# ==================== MovieLens ====================
def test_movielens_dense_ids_and_order(tmp_path):
    catalog, sequences, interactions = parse_movielens(*write_movielens(tmp_path))
    assert [item.raw_id for item in catalog.items] == ["10", "20", "30"]
    assert [user.raw_id for user in catalog.users] == ["1", "2", "10"]
    assert sequences[0].items == [2, 0]
    assert catalog.items[1].tags == [] and catalog.items[1].text == "Beta (2000)"
    assert catalog.items[0].text == "Alpha (1999) | Drama, Comedy"
    assert interactions[0].weight == 3.0


def test_movielens_malformed_line(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_movielens(*write_movielens(tmp_path, ratings="1::10::5::3\n1::30::4\n"))
    assert info.value.line == 2
    assert info.value.exit_code == 20
    with pytest.raises(ParseError):
        parse_ratings_line("1::10::x::5")


def test_movielens_unknown_item(tmp_path):
    with pytest.raises(CatalogError) as info:
        parse_movielens(*write_movielens(tmp_path, ratings="1::99::5::3\n"))
    assert info.value.exit_code == 21


def test_movielens_latin1_titles(tmp_path):
    ratings_path, movies_path = write_movielens(tmp_path)
    movies_path.write_bytes("10::Am\xe9lie (2001)::Romance\n20::B::Drama\n30::C::Drama\n".encode("latin-1"))
    catalog, _, _ = parse_movielens(ratings_path, movies_path)
    assert catalog.items[0].title == "Am\xe9lie (2001)"


# ==================== Store ====================
def test_dataset_artifacts_are_deterministic(tiny_config, tmp_path):
    first = save_dataset(build_dataset(tiny_config), tmp_path / "a", tiny_config)
    second = save_dataset(build_dataset(tiny_config), tmp_path / "b", tiny_config)
    assert first.files == second.files
    assert first.config_hash == tiny_config.config_hash()


def test_dataset_reload(tiny_config, tmp_path):
    bundle = build_dataset(tiny_config)
    save_dataset(bundle, tmp_path, tiny_config)
    loaded = load_dataset(tmp_path)
    assert loaded.vocab.tokens == bundle.vocab.tokens
    assert loaded.indexer.numbers == bundle.indexer.numbers
    assert set(loaded.eval_prompts) == set(bundle.eval_prompts)
    assert loaded.prompts_for("test", "sequential", "seen") == bundle.prompts_for("test", "sequential", "seen")
    with pytest.raises(DependencyError):
        loaded.prompts_for("test", "rating", "seen")


def test_missing_dataset_is_a_dependency_error(tmp_path):
    with pytest.raises(DependencyError):
        load_dataset(tmp_path)
