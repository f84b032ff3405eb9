"""Corpus data model: ingestion, query extraction, splitting, synthetic data.

Users, items, aspects and values are held as dense integer ids; the string
names live in lookup lists so that file formats stay human readable.  A
query is a tuple of review-word ids, an aspect is a tuple of aspect-word
ids, a value is a single value-word id.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from convsearch.stopwords import ENGLISH_STOPWORDS

_TOKEN_RE = re.compile(r"[^0-9a-z]+")

Query = tuple[int, ...]


class CorpusError(ValueError):
    """Raised on malformed input files or infeasible configurations."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return [t for t in _TOKEN_RE.split(text.lower()) if t]


class Vocab:
    """Dense token vocabulary with occurrence counts.

    Ids are assigned 0..n-1 in first-seen order; ``count_of[k]`` is the
    number of recorded occurrences of ``entries[k]`` (always >= 1).
    """

    def __init__(self) -> None:
        self.entries: list[str] = []
        self.id_of: dict[str, int] = {}
        self.count_of: list[int] = []

    def add(self, token: str, count: int = 1) -> int:
        """Record ``count`` occurrences of ``token``, returning its id."""
        idx = self.id_of.get(token)
        if idx is None:
            idx = len(self.entries)
            self.entries.append(token)
            self.id_of[token] = idx
            self.count_of.append(0)
        self.count_of[idx] += count
        return idx

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def words(self, ids: Iterable[int]) -> list[str]:
        return [self.entries[i] for i in ids]


@dataclass
class Review:
    """One review: a purchase event with its token stream."""

    user: int
    item: int
    tokens: list[int]


@dataclass(frozen=True)
class AspectValuePair:
    """Catalog entry: item has aspect (token-id tuple id) with a one-word value."""

    item: int
    aspect: int
    value: int
    mentions: int


@dataclass
class Corpus:
    users: list[str] = field(default_factory=list)
    items: list[str] = field(default_factory=list)
    reviews: list[Review] = field(default_factory=list)
    av_catalog: list[AspectValuePair] = field(default_factory=list)
    review_vocab: Vocab = field(default_factory=Vocab)
    aspect_word_vocab: Vocab = field(default_factory=Vocab)
    value_vocab: Vocab = field(default_factory=Vocab)
    aspects: list[tuple[int, ...]] = field(default_factory=list)
    item_queries: dict[int, list[Query]] = field(default_factory=dict)
    user_index: dict[str, int] = field(default_factory=dict)
    item_index: dict[str, int] = field(default_factory=dict)
    aspect_index: dict[tuple[int, ...], int] = field(default_factory=dict)
    dropped_empty_reviews: int = 0
    skipped_av_rows: int = 0

    def user_id(self, name: str) -> int:
        idx = self.user_index.get(name)
        if idx is None:
            idx = len(self.users)
            self.users.append(name)
            self.user_index[name] = idx
        return idx

    def item_id(self, name: str) -> int:
        idx = self.item_index.get(name)
        if idx is None:
            idx = len(self.items)
            self.items.append(name)
            self.item_index[name] = idx
        return idx

    def aspect_id(self, tokens: tuple[int, ...]) -> int:
        idx = self.aspect_index.get(tokens)
        if idx is None:
            idx = len(self.aspects)
            self.aspects.append(tokens)
            self.aspect_index[tokens] = idx
        return idx

    def aspect_words(self, aspect: int) -> str:
        return " ".join(self.aspect_word_vocab.entries[w] for w in self.aspects[aspect])

    def catalog_by_item(self) -> dict[int, list[AspectValuePair]]:
        by_item: dict[int, list[AspectValuePair]] = {}
        for pair in self.av_catalog:
            by_item.setdefault(pair.item, []).append(pair)
        return by_item

    def query_words(self, query: Query) -> list[str]:
        return self.review_vocab.words(query)


@dataclass(frozen=True)
class EvalPair:
    """One evaluation conversation: user + initial query + purchased items."""

    user: int
    query: Query
    relevant_items: frozenset[int]


@dataclass
class Split:
    """Train/test partition of reviews plus the test conversations."""

    train_reviews: list[int]
    test_reviews: list[int]
    test_queries: set[Query]
    test_pairs: list[EvalPair]

    def train_queries(self, corpus: Corpus, item: int) -> list[Query]:
        return [q for q in corpus.item_queries.get(item, []) if q not in self.test_queries]


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_FORMAT_FIELDS = {
    "canonical": ("user", "item", "text"),
    "amazon": ("reviewerID", "asin", "reviewText"),
}

_META_FIELDS = {
    "canonical": ("item", "categories"),
    "amazon": ("asin", "categories"),
}


def ingest_reviews(path: str | Path, format: str = "canonical", corpus: Corpus | None = None) -> Corpus:
    """Load a JSON-lines review file into a :class:`Corpus` (fresh by default).

    Dense ids are assigned in first-seen order; reviews whose text
    tokenizes to nothing are dropped and counted.
    """
    if format not in _FORMAT_FIELDS:
        raise CorpusError(f"unknown review format: {format!r}")
    user_key, item_key, text_key = _FORMAT_FIELDS[format]
    if corpus is None:
        corpus = Corpus()
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                user = record[user_key]
                item = record[item_key]
                text = record[text_key]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed review record ({exc})") from exc
            tokens = tokenize(text)
            if not tokens:
                corpus.dropped_empty_reviews += 1
                continue
            uid = corpus.user_id(str(user))
            iid = corpus.item_id(str(item))
            token_ids = [corpus.review_vocab.add(t) for t in tokens]
            corpus.reviews.append(Review(uid, iid, token_ids))
    if not corpus.reviews:
        raise CorpusError(f"{path}: no usable reviews")
    return corpus


def ingest_aspect_values(path: str | Path, corpus: Corpus) -> int:
    """Load a TSV aspect-value catalog (item, aspect phrase, value, mentions).

    Multi-word values and rows naming unknown items are skipped and counted;
    duplicate (item, aspect, value) rows merge by summing mention counts.
    Returns the number of rows skipped.
    """
    path = Path(path)
    merged: dict[tuple[int, int, int], int] = {}
    order: list[tuple[int, int, int]] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 4 tab-separated fields")
            item_name, aspect_phrase, value_word, mentions_str = (p.strip() for p in parts)
            try:
                mentions = int(mentions_str)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: bad mention count {mentions_str!r}") from exc
            value_tokens = tokenize(value_word)
            if len(value_tokens) != 1:
                skipped += 1
                continue
            if item_name not in corpus.item_index:
                skipped += 1
                continue
            aspect_tokens = tuple(corpus.aspect_word_vocab.add(t) for t in tokenize(aspect_phrase))
            if not aspect_tokens:
                skipped += 1
                continue
            item = corpus.item_index[item_name]
            aspect = corpus.aspect_id(aspect_tokens)
            value = corpus.value_vocab.add(value_tokens[0])
            key = (item, aspect, value)
            if key not in merged:
                merged[key] = 0
                order.append(key)
            merged[key] += mentions
    for item, aspect, value in order:
        corpus.av_catalog.append(AspectValuePair(item, aspect, value, merged[(item, aspect, value)]))
    corpus.skipped_av_rows += skipped
    return skipped


def extract_queries(
    corpus: Corpus,
    category_paths: dict[int, list[list[str]]],
    stopwords: frozenset[str] | set[str] = ENGLISH_STOPWORDS,
) -> None:
    """Turn per-item multi-level category paths into initial queries.

    Per path: concatenate the level terms, tokenize, drop stopwords, then
    drop duplicate words keeping first occurrence.  Each distinct surviving
    token list becomes one query for the item.  Query words missing from the
    review vocabulary are added to it (one count per occurrence).
    """
    for item, paths in category_paths.items():
        queries: list[Query] = []
        for path in paths:
            tokens = tokenize(" ".join(path))
            seen: set[str] = set()
            kept: list[str] = []
            for tok in tokens:
                if tok in stopwords or tok in seen:
                    continue
                seen.add(tok)
                kept.append(tok)
            if not kept:
                continue
            query = tuple(corpus.review_vocab.add(t) for t in kept)
            if query not in queries:
                queries.append(query)
        if queries:
            corpus.item_queries.setdefault(item, [])
            for q in queries:
                if q not in corpus.item_queries[item]:
                    corpus.item_queries[item].append(q)


def _iter_metadata(path: Path, format: str):
    if format not in _META_FIELDS:
        raise CorpusError(f"unknown metadata format: {format!r}")
    item_key, cat_key = _META_FIELDS[format]
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                yield str(record[item_key]), record[cat_key]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed metadata record ({exc})") from exc


def register_items(path: str | Path, corpus: Corpus, format: str = "canonical") -> None:
    """Assign item ids from a metadata file, in file order.

    Running this before review ingestion keeps item ids stable across a
    save/re-ingest round trip even for items that were never reviewed.
    """
    for item_name, _ in _iter_metadata(Path(path), format):
        corpus.item_id(item_name)


def ingest_item_metadata(path: str | Path, corpus: Corpus, format: str = "canonical") -> None:
    """Read a JSON-lines metadata file of item category paths and extract queries."""
    path = Path(path)
    category_paths: dict[int, list[list[str]]] = {}
    for item_name, cats in _iter_metadata(path, format):
        item = corpus.item_id(item_name)
        category_paths.setdefault(item, []).extend([[str(t) for t in p] for p in cats])
    extract_queries(corpus, category_paths)


def extract_av_pairs(
    corpus: Corpus, aspect_phrases: Sequence[str], value_words: Sequence[str]
) -> None:
    """Trivial co-occurrence extractor: plumbing for corpora lacking a catalog.

    Counts, per item, reviews in which an aspect phrase appears as a
    contiguous token run together with a value word, and appends the
    resulting (item, aspect, value, mentions) entries to the catalog.
    """
    aspect_token_lists = [tokenize(p) for p in aspect_phrases]
    single_values: list[str] = []
    for w in value_words:
        toks = tokenize(w)
        if len(toks) == 1 and toks[0] not in single_values:
            single_values.append(toks[0])
    counts: dict[tuple[int, int, int], int] = {}
    order: list[tuple[int, int, int]] = []
    for review in corpus.reviews:
        words = corpus.review_vocab.words(review.tokens)
        word_set = set(words)
        present_values = [v for v in single_values if v in word_set]
        if not present_values:
            continue
        for phrase in aspect_token_lists:
            n = len(phrase)
            if n == 0 or not any(
                words[i : i + n] == phrase for i in range(len(words) - n + 1)
            ):
                continue
            aspect = corpus.aspect_id(tuple(corpus.aspect_word_vocab.add(t) for t in phrase))
            for vw in present_values:
                value = corpus.value_vocab.add(vw)
                key = (review.item, aspect, value)
                if key not in counts:
                    counts[key] = 0
                    order.append(key)
                counts[key] += 1
    for key in order:
        corpus.av_catalog.append(AspectValuePair(*key, mentions=counts[key]))


# ---------------------------------------------------------------------------
# Train/test split
# ---------------------------------------------------------------------------


def split_train_test(
    corpus: Corpus,
    seed: int,
    review_frac: float = 0.7,
    query_test_frac: float = 0.3,
) -> Split:
    """Partition reviews per user and assign a query subset to the test side.

    Per user, ``review_frac`` of their reviews (rounded, at least one) go to
    training.  ``query_test_frac`` of distinct queries go to test; when that
    strands an item with no training query, one of its queries is moved back.
    Test pairs are all (user, test query) combinations where the user has a
    test review of an item carrying that query.
    """
    rng = np.random.default_rng(seed)
    train_reviews: list[int] = []
    test_reviews: list[int] = []
    by_user: dict[int, list[int]] = {}
    for idx, review in enumerate(corpus.reviews):
        by_user.setdefault(review.user, []).append(idx)
    for user in sorted(by_user):
        indices = np.array(by_user[user])
        perm = rng.permutation(len(indices))
        n_train = max(1, int(round(review_frac * len(indices))))
        chosen = set(indices[perm[:n_train]].tolist())
        for idx in by_user[user]:
            (train_reviews if idx in chosen else test_reviews).append(idx)

    distinct_queries: list[Query] = []
    seen_queries: set[Query] = set()
    for item in sorted(corpus.item_queries):
        for q in corpus.item_queries[item]:
            if q not in seen_queries:
                seen_queries.add(q)
                distinct_queries.append(q)
    n_test_queries = int(round(query_test_frac * len(distinct_queries)))
    perm = rng.permutation(len(distinct_queries))
    test_queries = {distinct_queries[i] for i in perm[:n_test_queries]}
    for item in sorted(corpus.item_queries):
        queries = corpus.item_queries[item]
        if queries and all(q in test_queries for q in queries):
            moved = queries[int(rng.integers(len(queries)))]
            test_queries.discard(moved)

    test_items_by_user: dict[int, list[int]] = {}
    for idx in test_reviews:
        review = corpus.reviews[idx]
        if review.item not in test_items_by_user.setdefault(review.user, []):
            test_items_by_user[review.user].append(review.item)
    test_pairs: list[EvalPair] = []
    for user in sorted(test_items_by_user):
        pair_queries: dict[Query, set[int]] = {}
        for item in test_items_by_user[user]:
            for q in corpus.item_queries.get(item, []):
                if q in test_queries:
                    pair_queries.setdefault(q, set()).add(item)
        for q in sorted(pair_queries, key=lambda q: (len(q), q)):
            test_pairs.append(EvalPair(user, q, frozenset(pair_queries[q])))

    train_reviews.sort()
    test_reviews.sort()
    return Split(train_reviews, test_reviews, test_queries, test_pairs)


# ---------------------------------------------------------------------------
# Canonical file round trip
# ---------------------------------------------------------------------------


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    """Write the canonical corpus files (reviews, item metadata, AV catalog)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "reviews.jsonl").open("w", encoding="utf-8") as fh:
        for review in corpus.reviews:
            fh.write(
                json.dumps(
                    {
                        "user": corpus.users[review.user],
                        "item": corpus.items[review.item],
                        "text": " ".join(corpus.review_vocab.words(review.tokens)),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with (out / "items.jsonl").open("w", encoding="utf-8") as fh:
        for item, name in enumerate(corpus.items):
            categories = [
                [" ".join(corpus.query_words(q))] for q in corpus.item_queries.get(item, [])
            ]
            fh.write(json.dumps({"item": name, "categories": categories}, sort_keys=True) + "\n")
    with (out / "av_catalog.tsv").open("w", encoding="utf-8") as fh:
        for pair in corpus.av_catalog:
            fh.write(
                "\t".join(
                    (
                        corpus.items[pair.item],
                        corpus.aspect_words(pair.aspect),
                        corpus.value_vocab.entries[pair.value],
                        str(pair.mentions),
                    )
                )
                + "\n"
            )


def load_corpus(in_dir: str | Path) -> Corpus:
    """Re-ingest a canonical corpus directory written by :func:`save_corpus`."""
    in_dir = Path(in_dir)
    corpus = Corpus()
    meta_path = in_dir / "items.jsonl"
    if meta_path.exists():
        register_items(meta_path, corpus)
    ingest_reviews(in_dir / "reviews.jsonl", corpus=corpus)
    av_path = in_dir / "av_catalog.tsv"
    if av_path.exists():
        ingest_aspect_values(av_path, corpus)
    if meta_path.exists():
        ingest_item_metadata(meta_path, corpus)
    return corpus


def save_split(split: Split, corpus: Corpus, path: str | Path) -> None:
    """Write a split as JSON (train review indices plus test pairs)."""
    payload = {
        "train_reviews": split.train_reviews,
        "test_reviews": split.test_reviews,
        "test_queries": [corpus.query_words(q) for q in sorted(split.test_queries)],
        "test_pairs": [
            {
                "user": corpus.users[p.user],
                "query": corpus.query_words(p.query),
                "relevant_items": sorted(corpus.items[i] for i in p.relevant_items),
            }
            for p in split.test_pairs
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_split(path: str | Path, corpus: Corpus) -> Split:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    vocab = corpus.review_vocab.id_of
    test_queries = {tuple(vocab[w] for w in q) for q in payload["test_queries"]}
    test_pairs = [
        EvalPair(
            corpus.user_index[p["user"]],
            tuple(vocab[w] for w in p["query"]),
            frozenset(corpus.item_index[i] for i in p["relevant_items"]),
        )
        for p in payload["test_pairs"]
    ]
    return Split(
        list(payload["train_reviews"]), list(payload["test_reviews"]), test_queries, test_pairs
    )


# ---------------------------------------------------------------------------
# Synthetic corpus with planted structure
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    users: int = 50
    items: int = 200
    aspects: int = 20
    values: int = 30
    vocab: int = 500
    reviews_per_user: int = 10
    aspects_per_item: int = 3
    review_len: int = 14
    category_size: int = 10

    def validate(self) -> None:
        if self.items < 2 or self.aspects < 1 or self.values < 2:
            raise CorpusError("synthetic config needs >= 2 items, >= 1 aspect, >= 2 values")
        if self.users < 1 or self.reviews_per_user < 1 or self.review_len < 1:
            raise CorpusError("synthetic config sizes must be positive")
        reserved = 2 * self.n_categories + self.aspects + self.values
        if self.vocab <= reserved:
            raise CorpusError(
                f"vocab size {self.vocab} too small for {reserved} planted content words"
            )

    @property
    def n_categories(self) -> int:
        return math.ceil(self.items / self.category_size)


@dataclass
class PlantedTruth:
    """Ground truth behind a synthetic corpus, for oracle checks."""

    item_attrs: list[dict[int, int]]
    user_prefs: list[dict[int, int]]
    item_category: list[int]
    category_queries: list[Query]  # indexed by category id

    def match_count(self, user: int, item: int) -> int:
        prefs = self.user_prefs[user]
        return sum(1 for a, v in self.item_attrs[item].items() if prefs.get(a) == v)


def _planted_records(config: SynthConfig, seed: int):
    """Deterministically generate raw records for the synthetic corpus."""
    rng = np.random.default_rng(seed)
    n_cat = config.n_categories
    cat_words = [(f"cat{c:03d}a", f"cat{c:03d}b") for c in range(n_cat)]
    aspect_phrases = [
        f"asp{a:03d} grade" if a % 3 == 0 else f"asp{a:03d}" for a in range(config.aspects)
    ]
    value_words = [f"val{v:03d}" for v in range(config.values)]
    aspect_flavor = [f"rasp{a:03d}" for a in range(config.aspects)]
    value_flavor = [f"rval{v:03d}" for v in range(config.values)]
    n_reserved = 2 * n_cat + config.aspects + config.values
    background = [f"w{k:04d}" for k in range(config.vocab - n_reserved)]

    item_category = [i % n_cat for i in range(config.items)]
    item_attrs: list[dict[int, int]] = []
    for _ in range(config.items):
        k = min(config.aspects_per_item, config.aspects)
        chosen = sorted(rng.choice(config.aspects, size=k, replace=False).tolist())
        item_attrs.append({a: int(rng.integers(config.values)) for a in chosen})
    user_prefs = [
        {a: int(rng.integers(config.values)) for a in range(config.aspects)}
        for _ in range(config.users)
    ]

    def match(user: int, item: int) -> int:
        return sum(1 for a, v in item_attrs[item].items() if user_prefs[user].get(a) == v)

    items_by_cat: dict[int, list[int]] = {}
    for item, cat in enumerate(item_category):
        items_by_cat.setdefault(cat, []).append(item)

    purchases: list[tuple[int, int]] = []
    for user in range(config.users):
        feasible = []
        for cat in range(n_cat):
            matching = [i for i in items_by_cat[cat] if match(user, i) >= 1]
            if matching:
                best = max(matching, key=lambda i: (match(user, i), -i))
                feasible.append((cat, best))
        if not feasible:
            raise CorpusError(f"infeasible synthetic config: user {user} matches no item")
        order = rng.permutation(len(feasible))
        for j in order[: min(config.reviews_per_user, len(feasible))]:
            purchases.append((user, feasible[j][1]))

    def review_text(user: int, item: int) -> str:
        attrs = list(item_attrs[item].items())
        cat = item_category[item]
        words: list[str] = []
        rolls = rng.random(config.review_len)
        for roll in rolls:
            if roll < 0.30:
                words.append(cat_words[cat][int(rng.integers(2))])
            elif roll < 0.65:
                a, v = attrs[int(rng.integers(len(attrs)))]
                words.append(aspect_flavor[a] if rng.random() < 0.5 else value_flavor[v])
            elif roll < 0.90:
                a = int(rng.integers(config.aspects))
                v = user_prefs[user][a]
                words.append(value_flavor[v] if rng.random() < 0.7 else aspect_flavor[a])
            else:
                words.append(background[int(rng.integers(len(background)))])
        return " ".join(words)

    review_records = [
        {"user": f"u{user:04d}", "item": f"i{item:04d}", "text": review_text(user, item)}
        for user, item in purchases
    ]
    av_rows = [
        (f"i{item:04d}", aspect_phrases[a], value_words[v], int(rng.integers(1, 6)))
        for item in range(config.items)
        for a, v in sorted(item_attrs[item].items())
    ]
    # Two paths per item so the split repair can keep one query in training
    # while the other may stay in the test set.
    category_paths = {
        f"i{item:04d}": [
            ["synthetic store", " ".join(cat_words[item_category[item]])],
            ["outlet collection", " ".join(cat_words[item_category[item]])],
        ]
        for item in range(config.items)
    }
    names = (aspect_phrases, value_words)
    return review_records, av_rows, category_paths, item_attrs, user_prefs, item_category, names


def generate_synthetic_with_truth(
    config: SynthConfig, seed: int
) -> tuple[Corpus, Split, PlantedTruth]:
    """Build a synthetic corpus plus split, also returning the planted truth."""
    config.validate()
    (
        records,
        av_rows,
        category_paths,
        item_attrs,
        user_prefs,
        item_category,
        (aspect_phrases, value_words),
    ) = _planted_records(config, seed)

    corpus = Corpus()
    # Register every item first (metadata order), mirroring canonical loading,
    # so corpus item ids equal the planted item indices.
    for item in range(config.items):
        corpus.item_id(f"i{item:04d}")
    for record in records:
        tokens = tokenize(record["text"])
        uid = corpus.user_id(record["user"])
        iid = corpus.item_id(record["item"])
        corpus.reviews.append(Review(uid, iid, [corpus.review_vocab.add(t) for t in tokens]))
    for item_name, aspect_phrase, value_word, mentions in av_rows:
        item = corpus.item_index[item_name]
        aspect = corpus.aspect_id(
            tuple(corpus.aspect_word_vocab.add(t) for t in tokenize(aspect_phrase))
        )
        value = corpus.value_vocab.add(tokenize(value_word)[0])
        corpus.av_catalog.append(AspectValuePair(item, aspect, value, mentions))
    extract_queries(
        corpus, {corpus.item_index[name]: paths for name, paths in category_paths.items()}
    )

    split = split_train_test(corpus, seed)
    # Translate planted aspect/value indices into corpus ids (assigned in
    # catalog encounter order) so the truth composes with corpus structures.
    aspect_of = {
        a: corpus.aspect_index.get(
            tuple(corpus.aspect_word_vocab.id_of[t] for t in tokenize(aspect_phrases[a])
                  if t in corpus.aspect_word_vocab.id_of)
        )
        for a in range(config.aspects)
    }
    value_of = {v: corpus.value_vocab.id_of.get(value_words[v]) for v in range(config.values)}
    truth = PlantedTruth(
        item_attrs=[
            {aspect_of[a]: value_of[v] for a, v in attrs.items()} for attrs in item_attrs
        ],
        user_prefs=[
            {
                aspect_of[a]: value_of[v]
                for a, v in prefs.items()
                if aspect_of[a] is not None and value_of[v] is not None
            }
            for prefs in user_prefs
        ],
        item_category=item_category,
        category_queries=[
            corpus.item_queries[corpus.item_index[f"i{cat:04d}"]][0]
            for cat in range(config.n_categories)
        ],
    )
    return corpus, split, truth


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[Corpus, Split]:
    corpus, split, _ = generate_synthetic_with_truth(config, seed)
    return corpus, split
