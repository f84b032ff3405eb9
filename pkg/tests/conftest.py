import json
from pathlib import Path

import pytest

from convsearch.corpus import (
    Corpus,
    SynthConfig,
    generate_synthetic_with_truth,
    ingest_aspect_values,
    ingest_item_metadata,
    ingest_reviews,
    register_items,
)


def write_corpus_files(
    tmp_path: Path,
    reviews: list[dict],
    av_rows: list[tuple[str, str, str, int]] = (),
    metadata: list[dict] = (),
) -> Path:
    (tmp_path / "reviews.jsonl").write_text(
        "".join(json.dumps(r) + "\n" for r in reviews), encoding="utf-8"
    )
    if av_rows:
        (tmp_path / "av_catalog.tsv").write_text(
            "".join("\t".join(map(str, row)) + "\n" for row in av_rows), encoding="utf-8"
        )
    if metadata:
        (tmp_path / "items.jsonl").write_text(
            "".join(json.dumps(m) + "\n" for m in metadata), encoding="utf-8"
        )
    return tmp_path


def ingest_dir(path: Path) -> Corpus:
    corpus = Corpus()
    if (path / "items.jsonl").exists():
        register_items(path / "items.jsonl", corpus)
    ingest_reviews(path / "reviews.jsonl", corpus=corpus)
    if (path / "av_catalog.tsv").exists():
        ingest_aspect_values(path / "av_catalog.tsv", corpus)
    if (path / "items.jsonl").exists():
        ingest_item_metadata(path / "items.jsonl", corpus)
    return corpus


@pytest.fixture()
def corpus_factory(tmp_path):
    def build(reviews, av_rows=(), metadata=()):
        return ingest_dir(write_corpus_files(tmp_path, reviews, av_rows, metadata))

    return build


DESK_CONFIG = SynthConfig()
SMALL_CONFIG = SynthConfig(
    users=12, items=40, aspects=8, values=10, vocab=200, reviews_per_user=5, category_size=8
)


@pytest.fixture(scope="session")
def small_synth():
    """A reduced synthetic corpus for quick integration tests."""
    return generate_synthetic_with_truth(SMALL_CONFIG, seed=11)


@pytest.fixture(scope="session")
def desk_synth():
    """The default-size synthetic corpus used by the acceptance suite."""
    return generate_synthetic_with_truth(DESK_CONFIG, seed=5)
