"""
MovieLens "::"-separated ingestion.

ratings: UserID::MovieID::Rating::Timestamp
movies:  MovieID::Title::Genre|Genre|...
"""
import logging
from pathlib import Path
from typing import List, Tuple

import pandas as pd

from ..errors import CatalogError, ParseError, StorageError, UsageError
from .schemas import Catalog, Interaction, ItemRecord, UserRecord, UserSequence

logger = logging.getLogger("ilm.dataset")

SEPARATOR = "::"


def _read_lines(path: Path) -> pd.Series:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        # the original ML-1M movie titles are latin-1
        text = raw.decode("latin-1")
    lines = pd.Series(text.splitlines(), dtype="object")
    lines.index = pd.RangeIndex(1, len(lines) + 1)
    return lines[lines.str.strip() != ""]


def _split_fields(lines: pd.Series, expected: int, path: Path) -> pd.DataFrame:
    parts = lines.str.split(SEPARATOR, regex=False)
    counts = parts.str.len()
    bad = counts[counts != expected]
    if len(bad):
        number = int(bad.index[0])
        raise ParseError(f"expected {expected} '::'-separated fields, got {int(bad.iloc[0])}",
                         path=str(path), line=number)
    return pd.DataFrame(parts.tolist(), index=lines.index)


def _numeric(frame: pd.DataFrame, column: int, name: str, path: Path) -> pd.Series:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = values[values.isna()]
    if len(bad):
        number = int(bad.index[0])
        raise ParseError(f"field '{name}' is not numeric: {frame.loc[number, column]!r}", path=str(path), line=number)
    return values


def parse_ratings_line(line: str) -> Tuple[str, str, float, int]:
    fields = line.strip().split(SEPARATOR)
    if len(fields) != 4:
        raise ParseError(f"expected 4 '::'-separated fields, got {len(fields)}")
    user, item, rating, timestamp = fields
    try:
        return user, item, float(rating), int(timestamp)
    except ValueError as e:
        raise ParseError(f"non-numeric rating or timestamp: {e}")


def load_ratings(path) -> pd.DataFrame:
    path = Path(path)
    lines = _read_lines(path)
    if lines.empty:
        raise UsageError(f"ratings file {path} is empty")
    frame = _split_fields(lines, 4, path)
    ratings = pd.DataFrame({
        "user_raw": frame[0].str.strip(),
        "item_raw": frame[1].str.strip(),
        "rating": _numeric(frame, 2, "rating", path).astype(float),
        "timestamp": _numeric(frame, 3, "timestamp", path).astype("int64"),
        "line": frame.index.astype("int64"),
    })
    return ratings.reset_index(drop=True)


def load_movies(path) -> pd.DataFrame:
    path = Path(path)
    lines = _read_lines(path)
    if lines.empty:
        raise UsageError(f"movies file {path} is empty")
    frame = _split_fields(lines, 3, path)
    movies = pd.DataFrame({
        "item_raw": frame[0].str.strip(),
        "title": frame[1].str.strip(),
        "genres": frame[2].str.strip(),
    })
    duplicated = movies[movies["item_raw"].duplicated()]
    if len(duplicated):
        raise ParseError(f"duplicate movie id {duplicated['item_raw'].iloc[0]}", path=str(path),
                         line=int(duplicated.index[0]))
    return movies.reset_index(drop=True)


def _raw_sort_key(values: pd.Series) -> pd.Series:
    numeric = pd.to_numeric(values, errors="coerce")
    return numeric if not numeric.isna().any() else values


def parse_movielens(ratings_path, movies_path) -> Tuple[Catalog, List[UserSequence], List[Interaction]]:
    """
    Dense ids: users and rated items in ascending raw-id order. Sequences are
    ordered by timestamp with ties broken by file order.
    """
    ratings = load_ratings(ratings_path)
    movies = load_movies(movies_path).set_index("item_raw")

    unknown = ratings[~ratings["item_raw"].isin(movies.index)]
    if len(unknown):
        first = unknown.iloc[0]
        raise CatalogError(f"{ratings_path}:{int(first['line'])}: rating references unknown item {first['item_raw']}")

    item_raw = ratings["item_raw"].drop_duplicates()
    item_raw = item_raw.iloc[_raw_sort_key(item_raw).argsort(kind="stable").values].tolist()
    user_raw = ratings["user_raw"].drop_duplicates()
    user_raw = user_raw.iloc[_raw_sort_key(user_raw).argsort(kind="stable").values].tolist()
    item_index = {raw: i for i, raw in enumerate(item_raw)}
    user_index = {raw: u for u, raw in enumerate(user_raw)}

    items = []
    for raw in item_raw:
        genres = movies.loc[raw, "genres"]
        tags = [g.strip() for g in genres.split("|") if g.strip() and g.strip() != "(no genres listed)"]
        items.append(ItemRecord(item_id=item_index[raw], raw_id=raw, title=movies.loc[raw, "title"], tags=tags))
    users = [UserRecord(user_id=user_index[raw], raw_id=raw) for raw in user_raw]

    ratings["user"] = ratings["user_raw"].map(user_index)
    ratings["item"] = ratings["item_raw"].map(item_index)
    ordered = ratings.sort_values(["user", "timestamp", "line"], kind="stable")

    sequences = [UserSequence(user_id=int(u), items=group["item"].astype(int).tolist())
                 for u, group in ordered.groupby("user", sort=True)]
    interactions = [Interaction(user_id=int(row.user), item_id=int(row.item), weight=float(row.rating),
                                timestamp=int(row.timestamp))
                    for row in ordered.itertuples(index=False)]
    logger.info(f"Parsed MovieLens: {len(users)} users, {len(items)} items, {len(interactions)} ratings")
    return Catalog(items=items, users=users), sequences, interactions
