"""
Builds the full dataset bundle from a RunConfig and persists it as
line-delimited artifacts in the data directory.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

from pydantic import BaseModel

from ..errors import DependencyError
from ..public.schemas import RunConfig
from ..services.file_handler import read_jsonl, read_lines, write_jsonl, write_lines
from ..template.prompt_templates import REGIMES
from ..utils.formatting_id import ItemIndexer, build_indexer
from ..utils.seeding import substream
from ..utils.template_utils import template_literal_text
from .movielens import parse_movielens
from .pairs import attach_text_ids, build_item_item_pairs, build_item_text_pairs, build_user_item_pairs, holdout_pairs
from .prompts import (
    RECOMMENDATION_TASKS,
    catalog_texts,
    render_description_prompts,
    render_prompts,
    render_train_prompts,
)
from .schemas import (
    Catalog,
    DatasetSplit,
    DatasetStats,
    Interaction,
    ItemRecord,
    PairExample,
    SequenceExample,
    SplitExample,
    UserRecord,
    UserSequence,
)
from .splits import split_leave_last
from .stats import compute_stats
from .synthetic import synth_generate
from .vocab import Vocabulary

logger = logging.getLogger("ilm.dataset")

SPLITS = ("dev", "test")


class DatasetManifest(BaseModel):
    config_hash: str
    source: str
    seed: int
    excluded_users: List[int]
    files: Dict[str, str]


@dataclass
class DatasetBundle:
    catalog: Catalog
    sequences: List[UserSequence]
    interactions: List[Interaction]
    split: DatasetSplit
    indexer: ItemIndexer
    vocab: Vocabulary
    item_text_train: List[PairExample]
    item_text_eval: List[PairExample]
    item_item: List[PairExample]
    user_item: List[PairExample]
    train_prompts: Dict[str, List[SequenceExample]] = field(default_factory=dict)
    eval_prompts: Dict[str, List[SequenceExample]] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return self.catalog.num_users

    @property
    def num_items(self) -> int:
        return self.catalog.num_items

    def eval_key(self, split: str, task: str, regime: str) -> str:
        return f"{split}_{task}_{regime}"

    def prompts_for(self, split: str, task: str, regime: str) -> List[SequenceExample]:
        key = self.eval_key(split, task, regime)
        if key not in self.eval_prompts:
            raise DependencyError(f"no {split} prompts for task '{task}' ({regime})", stage="gen-data")
        return self.eval_prompts[key]

    def stats(self) -> DatasetStats:
        return compute_stats(self)


def build_dataset(config: RunConfig) -> DatasetBundle:
    rng = substream(config.seed, "data")
    data = config.data
    if data.source == "movielens":
        catalog, sequences, interactions = parse_movielens(data.ratings_path, data.movies_path)
    else:
        catalog, sequences, interactions = synth_generate(data, rng)

    split = split_leave_last(sequences)
    indexer = build_indexer(data.indexer, catalog.num_items, rng)
    vocab = Vocabulary.build(catalog_texts(catalog) + template_literal_text(), indexer, catalog.num_users)

    item_text = attach_text_ids(build_item_text_pairs(catalog), vocab)
    item_text_train, item_text_eval = holdout_pairs(item_text, data.eval_text_fraction, rng)
    item_item = build_item_item_pairs(split.train)
    user_item = build_user_item_pairs(split.train)

    bundle = DatasetBundle(
        catalog=catalog, sequences=sequences, interactions=interactions, split=split, indexer=indexer,
        vocab=vocab, item_text_train=item_text_train, item_text_eval=item_text_eval, item_item=item_item,
        user_item=user_item,
    )
    for task in RECOMMENDATION_TASKS:
        bundle.train_prompts[task] = render_train_prompts(split.train, task, vocab, indexer, data.history_length, rng)
        for split_name in SPLITS:
            held_out = split.dev if split_name == "dev" else split.test
            for regime in REGIMES:
                bundle.eval_prompts[bundle.eval_key(split_name, task, regime)] = render_prompts(
                    held_out, task, regime, vocab, indexer, data.history_length, rng)
    bundle.train_prompts["description"] = render_description_prompts(item_text_train, "seen", vocab, indexer, rng)
    for regime in REGIMES:
        description = render_description_prompts(item_text_eval, regime, vocab, indexer, rng)
        for split_name in SPLITS:
            bundle.eval_prompts[bundle.eval_key(split_name, "description", regime)] = description
    return bundle


def save_dataset(bundle: DatasetBundle, directory, config: RunConfig) -> DatasetManifest:
    directory = Path(directory)
    files: Dict[str, str] = {}

    def put(name: str, records) -> None:
        files[name] = write_jsonl(directory / name, records)

    put("items.jsonl", bundle.catalog.items)
    put("users.jsonl", bundle.catalog.users)
    put("sequences.jsonl", bundle.sequences)
    put("interactions.jsonl", bundle.interactions)
    put("split_train.jsonl", bundle.split.train)
    put("split_dev.jsonl", bundle.split.dev)
    put("split_test.jsonl", bundle.split.test)
    put("pairs_item_text.jsonl", bundle.item_text_train)
    put("pairs_item_text_eval.jsonl", bundle.item_text_eval)
    put("pairs_item_item.jsonl", bundle.item_item)
    put("pairs_user_item.jsonl", bundle.user_item)
    for task, examples in bundle.train_prompts.items():
        put(f"prompts_train_{task}.jsonl", examples)
    for key, examples in bundle.eval_prompts.items():
        put(f"prompts_{key}.jsonl", examples)
    files["vocab.txt"] = write_lines(directory / "vocab.txt", bundle.vocab.to_lines())
    files["item_index.txt"] = write_lines(directory / "item_index.txt", bundle.indexer.to_lines())
    put("stats.jsonl", [bundle.stats()])

    manifest = DatasetManifest(config_hash=config.config_hash(), source=config.data.source, seed=config.seed,
                               excluded_users=bundle.split.excluded_users, files=files)
    write_jsonl(directory / "manifest.jsonl", [manifest])
    logger.info(f"Wrote dataset artifacts to {directory} ({len(files)} files)")
    return manifest


def load_manifest(directory) -> DatasetManifest:
    path = Path(directory) / "manifest.jsonl"
    if not path.exists():
        raise DependencyError(f"dataset artifacts missing in {directory}; run `ilm gen-data` first", stage="gen-data")
    return read_jsonl(path, DatasetManifest)[0]


def load_dataset(directory) -> DatasetBundle:
    directory = Path(directory)
    manifest = load_manifest(directory)

    def get(name: str, model):
        return read_jsonl(directory / name, model)

    catalog = Catalog(items=get("items.jsonl", ItemRecord), users=get("users.jsonl", UserRecord))
    split = DatasetSplit(train=get("split_train.jsonl", UserSequence), dev=get("split_dev.jsonl", SplitExample),
                         test=get("split_test.jsonl", SplitExample), excluded_users=manifest.excluded_users)
    bundle = DatasetBundle(
        catalog=catalog,
        sequences=get("sequences.jsonl", UserSequence),
        interactions=get("interactions.jsonl", Interaction),
        split=split,
        indexer=ItemIndexer.from_lines(read_lines(directory / "item_index.txt")),
        vocab=Vocabulary.from_lines(read_lines(directory / "vocab.txt")),
        item_text_train=get("pairs_item_text.jsonl", PairExample),
        item_text_eval=get("pairs_item_text_eval.jsonl", PairExample),
        item_item=get("pairs_item_item.jsonl", PairExample),
        user_item=get("pairs_user_item.jsonl", PairExample),
    )
    for name in manifest.files:
        if not name.startswith("prompts_"):
            continue
        key = name[len("prompts_"):-len(".jsonl")]
        examples = get(name, SequenceExample)
        if key.startswith("train_"):
            bundle.train_prompts[key[len("train_"):]] = examples
        else:
            bundle.eval_prompts[key] = examples
    return bundle
