"""Estimator facade: rankers with a scikit-learn style fit/rank API.

Every ranker implements ``fit(corpus, split)`` and
``rank(user, query_tokens, feedback, shown, candidates)`` returning
``[(item, score), ...]`` in descending score order with ties broken by item
id, which is the contract the conversation and evaluation modules consume.

The embedding ranker uses fine-grained aspect-value feedback; Rocchio,
SingleNeg and MultiNeg use the shown items as item-level negative feedback;
BM25 and QL ignore feedback entirely.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from convsearch import baselines, model as model_mod, training
from convsearch.corpus import Corpus, Split
from convsearch.model import FeedbackSet, ModelConfig, ModelParams
from convsearch.training import TrainConfig
from convsearch.validation import check_fitted, check_query_tokens


def _order(candidates: Iterable[int], scores: np.ndarray) -> list[tuple[int, float]]:
    ids = np.fromiter(candidates, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("candidate set is empty")
    picked = scores[ids]
    order = np.lexsort((ids, -picked))
    return [(int(ids[k]), float(picked[k])) for k in order]


class EmbeddingRanker(BaseEstimator):
    """Personalized embedding ranker trained on purchase conversations.

    With both aspect-value networks disabled the model degrades to a plain
    personalized embedding ranker whose feedback rounds are no-ops.
    """

    def __init__(
        self,
        dim: int = 100,
        query_weight: float = 0.5,
        use_aspect_net: bool = True,
        use_value_net: bool = True,
        use_negative_values: bool = True,
        separate_negative_table: bool = True,
        share_query_aspect_projection: bool = False,
        epochs: int = 20,
        batch_size: int = 64,
        lr0: float = 0.5,
        grad_clip_global_norm: float = 5.0,
        beta: int = 5,
        l2_gamma: float = 0.0,
        subsample_rate: float = 1e-5,
        nonrel_items_per_conv: int = 2,
        seed: int = 13,
    ) -> None:
        self.dim = dim
        self.query_weight = query_weight
        self.use_aspect_net = use_aspect_net
        self.use_value_net = use_value_net
        self.use_negative_values = use_negative_values
        self.separate_negative_table = separate_negative_table
        self.share_query_aspect_projection = share_query_aspect_projection
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.grad_clip_global_norm = grad_clip_global_norm
        self.beta = beta
        self.l2_gamma = l2_gamma
        self.subsample_rate = subsample_rate
        self.nonrel_items_per_conv = nonrel_items_per_conv
        self.seed = seed

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim,
            query_weight=self.query_weight,
            use_aspect_net=self.use_aspect_net,
            use_value_net=self.use_value_net,
            use_negative_values=self.use_negative_values,
            separate_negative_table=self.separate_negative_table,
            share_query_aspect_projection=self.share_query_aspect_projection,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            grad_clip_global_norm=self.grad_clip_global_norm,
            beta=self.beta,
            l2_gamma=self.l2_gamma,
            subsample_rate=self.subsample_rate,
            nonrel_items_per_conv=self.nonrel_items_per_conv,
            seed=self.seed,
        )

    def fit(self, corpus: Corpus, split: Split) -> "EmbeddingRanker":
        params, trace = training.train(corpus, split, self.model_config(), self.train_config())
        self.params_ = params
        self.loss_trace_ = trace
        self.aspect_tokens_ = list(corpus.aspects)
        self.n_words_ = len(corpus.review_vocab)
        return self

    @classmethod
    def from_params(cls, params: ModelParams, corpus: Corpus) -> "EmbeddingRanker":
        """Wrap pre-trained parameters (e.g. loaded from a model file)."""
        config = params.config
        ranker = cls(
            dim=config.dim,
            query_weight=config.query_weight,
            use_aspect_net=config.use_aspect_net,
            use_value_net=config.use_value_net,
            use_negative_values=config.use_negative_values,
            separate_negative_table=config.separate_negative_table,
            share_query_aspect_projection=config.share_query_aspect_projection,
        )
        ranker.params_ = params
        ranker.loss_trace_ = []
        ranker.aspect_tokens_ = list(corpus.aspects)
        ranker.n_words_ = len(corpus.review_vocab)
        return ranker

    def rank(
        self,
        user: int | None,
        query_tokens: Sequence[int],
        feedback: FeedbackSet | None = None,
        shown: Sequence[int] = (),
        candidates: Iterable[int] | None = None,
    ) -> list[tuple[int, float]]:
        check_fitted(self, ["params_"])
        check_query_tokens(query_tokens, self.n_words_)
        if candidates is None:
            candidates = range(self.params_.item_emb.shape[0])
        feedback = feedback if feedback is not None else FeedbackSet()
        return model_mod.rank_items(
            user, query_tokens, feedback, candidates, self.aspect_tokens_, self.params_
        )


class _IndexedRanker(BaseEstimator):
    """Shared fit() for rankers scoring over the inverted index."""

    def fit(self, corpus: Corpus, split: Split):
        self.index_ = baselines.build_index(corpus, split)
        self.n_words_ = len(corpus.review_vocab)
        return self

    def _initial_scores(self, query_tokens: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def rank(
        self,
        user: int | None,
        query_tokens: Sequence[int],
        feedback: FeedbackSet | None = None,
        shown: Sequence[int] = (),
        candidates: Iterable[int] | None = None,
    ) -> list[tuple[int, float]]:
        check_fitted(self, ["index_"])
        check_query_tokens(query_tokens, self.n_words_)
        if candidates is None:
            candidates = range(self.index_.n_items)
        scores = self._scores(query_tokens, shown)
        return _order(candidates, scores)

    def _scores(self, query_tokens: Sequence[int], shown: Sequence[int]) -> np.ndarray:
        return self._initial_scores(query_tokens)


class Bm25Ranker(_IndexedRanker):
    def __init__(self, k1: float = 1.2, b: float = 0.75) -> None:
        self.k1 = k1
        self.b = b

    def _initial_scores(self, query_tokens: Sequence[int]) -> np.ndarray:
        return baselines.bm25_scores(query_tokens, self.index_, self.k1, self.b)


class QlRanker(_IndexedRanker):
    def __init__(self, mu: float = 1500.0) -> None:
        self.mu = mu

    def _initial_scores(self, query_tokens: Sequence[int]) -> np.ndarray:
        return baselines.ql_scores(query_tokens, self.index_, self.mu)


class RocchioRanker(Bm25Ranker):
    """BM25 initial ranking; later rounds push the query vector away from the
    centroid of the shown (non-relevant) items."""

    def __init__(self, k1: float = 1.2, b: float = 0.75, neg_weight: float = 0.2) -> None:
        super().__init__(k1=k1, b=b)
        self.neg_weight = neg_weight

    def _scores(self, query_tokens: Sequence[int], shown: Sequence[int]) -> np.ndarray:
        if not shown:
            return self._initial_scores(query_tokens)
        return baselines.rocchio_rerank(
            query_tokens, list(shown), self.index_, self.neg_weight, self.k1, self.b
        )


class SingleNegRanker(QlRanker):
    """QL initial ranking, penalized by one negative topic model estimated
    from all shown items."""

    def __init__(
        self,
        mu: float = 1500.0,
        neg_doc_weight: float = 0.1,
        top_n: int = 20,
        mix_weight: float = 0.5,
        em_iters: int = 10,
    ) -> None:
        super().__init__(mu=mu)
        self.neg_doc_weight = neg_doc_weight
        self.top_n = top_n
        self.mix_weight = mix_weight
        self.em_iters = em_iters

    def _scores(self, query_tokens: Sequence[int], shown: Sequence[int]) -> np.ndarray:
        scores = self._initial_scores(query_tokens)
        if not shown:
            return scores
        neg_model = baselines.estimate_negative_model(
            list(shown), self.index_, self.mix_weight, self.top_n, self.em_iters
        )
        return baselines.singleneg_rerank(
            scores, neg_model, self.index_, self.neg_doc_weight, self.mu
        )


class MultiNegRanker(SingleNegRanker):
    """One negative topic model per shown item; the worst-case penalty applies."""

    def _scores(self, query_tokens: Sequence[int], shown: Sequence[int]) -> np.ndarray:
        scores = self._initial_scores(query_tokens)
        if not shown:
            return scores
        neg_models = [
            baselines.estimate_negative_model(
                [item], self.index_, self.mix_weight, self.top_n, self.em_iters
            )
            for item in shown
        ]
        return baselines.multineg_rerank(
            scores, neg_models, self.index_, self.neg_doc_weight, self.mu
        )


BASELINE_RANKERS = {
    "bm25": Bm25Ranker,
    "ql": QlRanker,
    "rocchio": RocchioRanker,
    "singleneg": SingleNegRanker,
    "multineg": MultiNegRanker,
}
