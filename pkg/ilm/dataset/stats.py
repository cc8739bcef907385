import pandas as pd

from .schemas import DatasetStats


def compute_stats(bundle) -> DatasetStats:
    """Pair and split counts of a dataset bundle."""
    return DatasetStats(
        num_users=bundle.catalog.num_users,
        num_items=bundle.catalog.num_items,
        item_text_pairs=len(bundle.item_text_train) + len(bundle.item_text_eval),
        item_item_pairs=len(bundle.item_item),
        user_item_pairs=len(bundle.user_item),
        train_interactions=sum(len(seq.items) for seq in bundle.split.train),
        dev_examples=len(bundle.split.dev),
        test_examples=len(bundle.split.test),
        excluded_users=len(bundle.split.excluded_users),
        items_without_text=sum(1 for item in bundle.catalog.items if not item.text),
        vocabulary_size=len(bundle.vocab),
    )


def stats_table(stats: DatasetStats) -> pd.DataFrame:
    return pd.DataFrame([stats.model_dump()]).T.rename(columns={0: "count"})
