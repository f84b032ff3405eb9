"""Term-based retrieval and item-level negative-feedback baselines.

Each item's document is the concatenation of its training reviews.  BM25
and query likelihood score those documents; Rocchio, SingleNeg and MultiNeg
rerank using previously shown (non-relevant) items.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from convsearch.corpus import Corpus, Split


@dataclass
class InvertedIndex:
    """Exact statistics over per-item documents built from training reviews."""

    n_items: int
    doc_len: np.ndarray  # tokens per item document
    collection_len: int
    tf: dict[int, dict[int, int]]  # term -> {item: frequency}
    df: dict[int, int]  # term -> number of items containing it
    collection_tf: dict[int, int]  # term -> total frequency

    @property
    def avg_len(self) -> float:
        if self.n_items == 0:
            return 0.0
        return self.collection_len / self.n_items

    def term_freq(self, term: int, item: int) -> int:
        return self.tf.get(term, {}).get(item, 0)

    def background_prob(self, term: int) -> float:
        if self.collection_len == 0:
            return 0.0
        return self.collection_tf.get(term, 0) / self.collection_len

    def item_terms(self, item: int) -> dict[int, int]:
        return {t: items[item] for t, items in self.tf.items() if item in items}


def build_index(corpus: Corpus, split: Split) -> InvertedIndex:
    """Index only the training reviews; items without any get empty documents."""
    doc_len = np.zeros(len(corpus.items), dtype=np.int64)
    tf: dict[int, dict[int, int]] = {}
    for idx in split.train_reviews:
        review = corpus.reviews[idx]
        doc_len[review.item] += len(review.tokens)
        for token in review.tokens:
            per_item = tf.setdefault(token, {})
            per_item[review.item] = per_item.get(review.item, 0) + 1
    df = {t: len(items) for t, items in tf.items()}
    collection_tf = {t: sum(items.values()) for t, items in tf.items()}
    return InvertedIndex(
        n_items=len(corpus.items),
        doc_len=doc_len,
        collection_len=int(doc_len.sum()),
        tf=tf,
        df=df,
        collection_tf=collection_tf,
    )


def bm25_idf(term: int, index: InvertedIndex) -> float:
    df = index.df.get(term, 0)
    return math.log((index.n_items - df + 0.5) / (df + 0.5) + 1.0)


def _bm25_term_weight(tf: float, doc_len: float, index: InvertedIndex, k1: float, b: float) -> float:
    if tf == 0:
        return 0.0
    avg = index.avg_len or 1.0
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg))


def bm25_score(
    query_terms: Sequence[int], item: int, index: InvertedIndex, k1: float = 1.2, b: float = 0.75
) -> float:
    """Sum over query terms of IDF * saturated term frequency."""
    score = 0.0
    doc_len = float(index.doc_len[item])
    for term in query_terms:
        tf = index.term_freq(term, item)
        if tf:
            score += bm25_idf(term, index) * _bm25_term_weight(tf, doc_len, index, k1, b)
    return score


def ql_score(
    query_terms: Sequence[int], item: int, index: InvertedIndex, mu: float = 1500.0
) -> float:
    """Dirichlet-smoothed log likelihood of the query under the item document.

    Terms absent from the whole collection are skipped (their smoothed
    probability would be zero for every item).
    """
    score = 0.0
    doc_len = float(index.doc_len[item])
    for term in query_terms:
        p_bg = index.background_prob(term)
        if p_bg <= 0.0:
            continue
        tf = index.term_freq(term, item)
        score += math.log((tf + mu * p_bg) / (doc_len + mu))
    return score


def bm25_scores(
    query_terms: Sequence[int], index: InvertedIndex, k1: float = 1.2, b: float = 0.75
) -> np.ndarray:
    """BM25 over every item, sparse accumulation via the inverted lists."""
    scores = np.zeros(index.n_items)
    avg = index.avg_len or 1.0
    for term in query_terms:
        posting = index.tf.get(term)
        if not posting:
            continue
        idf = bm25_idf(term, index)
        for item, tf in posting.items():
            scores[item] += idf * tf * (k1 + 1.0) / (
                tf + k1 * (1.0 - b + b * index.doc_len[item] / avg)
            )
    return scores


def ql_scores(query_terms: Sequence[int], index: InvertedIndex, mu: float = 1500.0) -> np.ndarray:
    scores = np.zeros(index.n_items)
    lens = index.doc_len.astype(np.float64)
    for term in query_terms:
        p_bg = index.background_prob(term)
        if p_bg <= 0.0:
            continue
        term_scores = np.log(mu * p_bg / (lens + mu))  # tf = 0 everywhere first
        posting = index.tf.get(term, {})
        for item, tf in posting.items():
            term_scores[item] = math.log((tf + mu * p_bg) / (lens[item] + mu))
        scores += term_scores
    return scores


# ---------------------------------------------------------------------------
# Rocchio
# ---------------------------------------------------------------------------


def _item_bm25_vector(item: int, index: InvertedIndex, k1: float, b: float) -> dict[int, float]:
    doc_len = float(index.doc_len[item])
    return {
        term: bm25_idf(term, index) * _bm25_term_weight(tf, doc_len, index, k1, b)
        for term, tf in index.item_terms(item).items()
    }


def rocchio_rerank(
    query_terms: Sequence[int],
    nonrel_items: Sequence[int],
    index: InvertedIndex,
    neg_weight: float,
    k1: float = 1.2,
    b: float = 0.75,
) -> np.ndarray:
    """Scores after pushing the query vector away from the non-relevant centroid.

    The query vector holds IDF weights on its own terms; item vectors hold
    BM25 term weights.  Items are scored by the dot product with the
    adjusted query vector.
    """
    if not nonrel_items:
        raise ValueError("rocchio_rerank needs at least one non-relevant item")
    query_vec: dict[int, float] = {}
    for term in query_terms:
        query_vec[term] = query_vec.get(term, 0.0) + bm25_idf(term, index)
    centroid: dict[int, float] = {}
    for item in nonrel_items:
        for term, weight in _item_bm25_vector(item, index, k1, b).items():
            centroid[term] = centroid.get(term, 0.0) + weight / len(nonrel_items)
    adjusted = dict(query_vec)
    for term, weight in centroid.items():
        adjusted[term] = adjusted.get(term, 0.0) - neg_weight * weight

    scores = np.zeros(index.n_items)
    avg = index.avg_len or 1.0
    for term, q_weight in adjusted.items():
        if q_weight == 0.0:
            continue
        idf = bm25_idf(term, index)
        for item, tf in index.tf.get(term, {}).items():
            scores[item] += q_weight * idf * tf * (k1 + 1.0) / (
                tf + k1 * (1.0 - b + b * index.doc_len[item] / avg)
            )
    return scores


# ---------------------------------------------------------------------------
# SingleNeg / MultiNeg
# ---------------------------------------------------------------------------


@dataclass
class NegTopicModel:
    """Truncated term distribution extracted from non-relevant documents."""

    probs: dict[int, float] = field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.probs:
            total = sum(self.probs.values())
            if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
                raise ValueError(f"negative topic model sums to {total}, expected 1")

    def __bool__(self) -> bool:
        return bool(self.probs)


def estimate_negative_model(
    nonrel_items: Sequence[int],
    index: InvertedIndex,
    mix_weight: float = 0.5,
    top_n: int = 20,
    em_iters: int = 10,
) -> NegTopicModel:
    """EM fit of the two-component mixture over the non-relevant documents.

    The background component is the fixed collection model with fixed weight
    ``mix_weight``; the E-step assigns each token occurrence to the negative
    component, the M-step renormalizes.  The result is truncated to the
    ``top_n`` most probable terms and renormalized.
    """
    if not nonrel_items:
        raise ValueError("need at least one non-relevant document")
    if not 0.0 <= mix_weight < 1.0:
        raise ValueError("mix_weight must be in [0, 1)")
    counts: dict[int, int] = {}
    for item in nonrel_items:
        for term, tf in index.item_terms(item).items():
            counts[term] = counts.get(term, 0) + tf
    if not counts:
        return NegTopicModel(probs={}, degenerate=True)
    terms = sorted(counts)
    c = np.array([counts[t] for t in terms], dtype=np.float64)
    p_bg = np.array([index.background_prob(t) for t in terms])
    p_neg = c / c.sum()
    degenerate = False
    for _ in range(em_iters):
        numer = (1.0 - mix_weight) * p_neg
        denom = numer + mix_weight * p_bg
        resp = np.divide(numer, denom, out=np.zeros_like(numer), where=denom > 0)
        weighted = c * resp
        total = weighted.sum()
        if total <= 0:
            # All mass explained by the background: fall back to uniform.
            p_neg = np.full(len(terms), 1.0 / len(terms))
            degenerate = True
            break
        p_neg = weighted / total

    order = sorted(range(len(terms)), key=lambda j: (-p_neg[j], terms[j]))[:top_n]
    kept = {terms[j]: float(p_neg[j]) for j in order}
    total = sum(kept.values())
    if total <= 0:
        kept = {t: 1.0 / len(kept) for t in kept}
        degenerate = True
    else:
        kept = {t: p / total for t, p in kept.items()}
    return NegTopicModel(probs=kept, degenerate=degenerate)


def _excess_cross_entropy(
    model: NegTopicModel, item: int, index: InvertedIndex, mu: float
) -> float:
    """Sum over model terms of P_neg(t) * log(P(t|item) / P0(t|item)).

    P0 is the Dirichlet-smoothed probability with zero term frequency, so
    the value is 0 exactly when the item shares no term with the model and
    grows with textual similarity.
    """
    doc_len = float(index.doc_len[item])
    total = 0.0
    for term, p_neg in model.probs.items():
        tf = index.term_freq(term, item)
        if tf == 0:
            continue
        p_bg = index.background_prob(term)
        if p_bg <= 0:
            continue
        total += p_neg * (math.log(tf + mu * p_bg) - math.log(mu * p_bg))
    return total


def singleneg_rerank(
    initial_scores: np.ndarray,
    neg_model: NegTopicModel,
    index: InvertedIndex,
    neg_doc_weight: float,
    mu: float = 1500.0,
) -> np.ndarray:
    """Penalize items by their similarity to the negative topic model.

    Only items sharing at least one term with the model are touched; the
    penalty is the cross entropy in excess of the zero-overlap baseline.
    """
    adjusted = np.array(initial_scores, dtype=np.float64)
    if not neg_model or neg_doc_weight == 0.0:
        return adjusted
    for item in range(index.n_items):
        excess = _excess_cross_entropy(neg_model, item, index, mu)
        if excess > 0.0:
            adjusted[item] -= neg_doc_weight * excess
    return adjusted


def multineg_rerank(
    initial_scores: np.ndarray,
    neg_models: Sequence[NegTopicModel],
    index: InvertedIndex,
    neg_doc_weight: float,
    mu: float = 1500.0,
) -> np.ndarray:
    """Like :func:`singleneg_rerank` with the worst (max) per-model penalty."""
    adjusted = np.array(initial_scores, dtype=np.float64)
    models = [m for m in neg_models if m]
    if not models or neg_doc_weight == 0.0:
        return adjusted
    for item in range(index.n_items):
        excess = max(_excess_cross_entropy(m, item, index, mu) for m in models)
        if excess > 0.0:
            adjusted[item] -= neg_doc_weight * excess
    return adjusted


TOP_N_GRID = (10, 20, 30, 40, 50)
NEG_DOC_WEIGHT_GRID = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4)
