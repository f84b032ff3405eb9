"""Embedding model parameters and closed-form scoring.

All scoring runs in float64.  ``log_sigmoid`` is used everywhere a
probability enters a sum of logs, so scores stay finite for finite
parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MODEL_MAGIC = b"CPSM"
MODEL_VERSION = 2


class ModelError(ValueError):
    """Raised on invalid configuration or corrupt model files."""


def sigmoid(x):
    """Logistic function (unclamped; may round to 0.0 or 1.0 when saturated)."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


# Open-interval bounds for reported probabilities: the complement of either
# bound is still strictly inside (0, 1) in float64.
_PROB_LO = 1e-16
_PROB_HI = float(np.nextafter(1.0, 0.0))


def _clamp_prob(p: float) -> float:
    return min(max(p, _PROB_LO), _PROB_HI)


def log_sigmoid(x):
    """log(sigmoid(x)) computed without underflow."""
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


@dataclass(frozen=True)
class ModelConfig:
    """Model hyper-parameters and ablation switches.

    ``use_negative_values=False`` drops the negative-feedback term from the
    training objective; ``separate_negative_table=False`` keeps the term but
    shares one value table.  Either way the negative-value probability is
    then computed as one minus the positive-value probability.
    """

    dim: int = 100
    query_weight: float = 0.5
    use_aspect_net: bool = True
    use_value_net: bool = True
    use_negative_values: bool = True
    separate_negative_table: bool = True
    share_query_aspect_projection: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ModelError(f"dim must be >= 1, got {self.dim}")
        if not 0.0 <= self.query_weight <= 1.0:
            raise ModelError(f"query_weight must be in [0, 1], got {self.query_weight}")

    @property
    def has_negative_table(self) -> bool:
        return self.use_negative_values and self.separate_negative_table

    def hem(self) -> "ModelConfig":
        """The same model with the aspect-value networks disabled."""
        return replace(self, use_aspect_net=False, use_value_net=False)


@dataclass(frozen=True)
class FeedbackSet:
    """Accumulated (aspect, value) feedback from one conversation."""

    positive: frozenset[tuple[int, int]] = frozenset()
    negative: frozenset[tuple[int, int]] = frozenset()

    def __post_init__(self) -> None:
        if self.positive & self.negative:
            raise ModelError("positive and negative feedback overlap")

    def __bool__(self) -> bool:
        return bool(self.positive or self.negative)

    def merged(self, positive=(), negative=()) -> "FeedbackSet":
        return FeedbackSet(
            self.positive | frozenset(positive), self.negative | frozenset(negative)
        )


@dataclass
class ModelParams:
    """All trainable tables.  ``value_neg_emb`` is None without a separate table."""

    config: ModelConfig
    word_emb: np.ndarray
    user_emb: np.ndarray
    item_emb: np.ndarray
    aspect_word_emb: np.ndarray
    value_pos_emb: np.ndarray
    value_neg_emb: np.ndarray | None
    query_proj_W: np.ndarray
    query_proj_b: np.ndarray
    aspect_proj_W: np.ndarray | None
    aspect_proj_b: np.ndarray | None

    def tables(self) -> dict[str, np.ndarray]:
        out = {
            "word_emb": self.word_emb,
            "user_emb": self.user_emb,
            "item_emb": self.item_emb,
            "aspect_word_emb": self.aspect_word_emb,
            "value_pos_emb": self.value_pos_emb,
            "query_proj_W": self.query_proj_W,
            "query_proj_b": self.query_proj_b,
        }
        if self.value_neg_emb is not None:
            out["value_neg_emb"] = self.value_neg_emb
        if self.aspect_proj_W is not None:
            out["aspect_proj_W"] = self.aspect_proj_W
            out["aspect_proj_b"] = self.aspect_proj_b
        return out

    def aspect_projection(self) -> tuple[np.ndarray, np.ndarray]:
        if self.config.share_query_aspect_projection:
            return self.query_proj_W, self.query_proj_b
        return self.aspect_proj_W, self.aspect_proj_b

    def check_finite(self) -> None:
        for name, table in self.tables().items():
            if not np.all(np.isfinite(table)):
                raise ModelError(f"non-finite values in {name}")

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            word_emb=self.word_emb.copy(),
            user_emb=self.user_emb.copy(),
            item_emb=self.item_emb.copy(),
            aspect_word_emb=self.aspect_word_emb.copy(),
            value_pos_emb=self.value_pos_emb.copy(),
            value_neg_emb=None if self.value_neg_emb is None else self.value_neg_emb.copy(),
            query_proj_W=self.query_proj_W.copy(),
            query_proj_b=self.query_proj_b.copy(),
            aspect_proj_W=None if self.aspect_proj_W is None else self.aspect_proj_W.copy(),
            aspect_proj_b=None if self.aspect_proj_b is None else self.aspect_proj_b.copy(),
        )


@dataclass(frozen=True)
class CorpusSizes:
    n_words: int
    n_users: int
    n_items: int
    n_aspect_words: int
    n_values: int

    @classmethod
    def of(cls, corpus) -> "CorpusSizes":
        return cls(
            n_words=len(corpus.review_vocab),
            n_users=len(corpus.users),
            n_items=len(corpus.items),
            n_aspect_words=len(corpus.aspect_word_vocab),
            n_values=len(corpus.value_vocab),
        )


def init_params(config: ModelConfig, sizes: CorpusSizes, seed: int) -> ModelParams:
    """Uniform initialization in [-0.5/d, 0.5/d] per entry."""
    rng = np.random.default_rng(seed)
    half = 0.5 / config.dim

    def table(*shape) -> np.ndarray:
        return rng.uniform(-half, half, size=shape)

    d = config.dim
    return ModelParams(
        config=config,
        word_emb=table(sizes.n_words, d),
        user_emb=table(sizes.n_users, d),
        item_emb=table(sizes.n_items, d),
        aspect_word_emb=table(sizes.n_aspect_words, d),
        value_pos_emb=table(sizes.n_values, d),
        value_neg_emb=table(sizes.n_values, d) if config.has_negative_table else None,
        query_proj_W=table(d, d),
        query_proj_b=table(d),
        aspect_proj_W=None if config.share_query_aspect_projection else table(d, d),
        aspect_proj_b=None if config.share_query_aspect_projection else table(d),
    )


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def project_query(tokens: Sequence[int], params: ModelParams) -> np.ndarray:
    """Non-linear projection of the mean word embedding: tanh(W m + b)."""
    if len(tokens) == 0:
        raise ModelError("cannot project an empty token list")
    mean = params.word_emb[np.asarray(tokens, dtype=np.intp)].mean(axis=0)
    return np.tanh(params.query_proj_W @ mean + params.query_proj_b)


def embed_aspect(aspect_tokens: Sequence[int], params: ModelParams) -> np.ndarray:
    """Aspect embedding: the query projection form over aspect-word embeddings."""
    if len(aspect_tokens) == 0:
        raise ModelError("cannot embed an empty aspect")
    W, b = params.aspect_projection()
    mean = params.aspect_word_emb[np.asarray(aspect_tokens, dtype=np.intp)].mean(axis=0)
    return np.tanh(W @ mean + b)


def blend_query_user(q0: np.ndarray, user: int | None, params: ModelParams) -> np.ndarray:
    """Query/user convex combination; ``user=None`` falls back to the mean
    user embedding (cold-start / anonymous sessions)."""
    lam = params.config.query_weight
    user_vec = params.user_emb.mean(axis=0) if user is None else params.user_emb[user]
    return lam * q0 + (1.0 - lam) * user_vec


def score_item_initial(user: int | None, q0: np.ndarray, item: int, params: ModelParams) -> float:
    """Query/user blend dotted with the item embedding (softmax logit; the
    normalizer is shared across items and so rank-invariant)."""
    return float(params.item_emb[item] @ blend_query_user(q0, user, params))


def prob_aspect(aspect_vec: np.ndarray, item: int, params: ModelParams) -> float:
    """Probability that the aspect occurs among the item's aspects."""
    return _clamp_prob(float(sigmoid(aspect_vec @ params.item_emb[item])))


def prob_value(
    value: int, polarity: str, aspect_vec: np.ndarray, item: int, params: ModelParams
) -> float:
    """Probability that the value occurs in the item-aspect's positive or
    negative feedback, per the independent per-value trials assumption."""
    target = params.item_emb[item] + aspect_vec
    if polarity == "positive":
        return _clamp_prob(float(sigmoid(params.value_pos_emb[value] @ target)))
    if polarity != "negative":
        raise ModelError(f"unknown polarity {polarity!r}")
    if params.config.has_negative_table:
        return _clamp_prob(float(sigmoid(params.value_neg_emb[value] @ target)))
    # No separate table: the negative probability is exactly the complement
    # of the (clamped) positive probability.
    return 1.0 - _clamp_prob(float(sigmoid(params.value_pos_emb[value] @ target)))


def _feedback_log_terms(
    feedback, aspect_tokens: Sequence[Sequence[int]], params: ModelParams
) -> np.ndarray:
    """Per-item feedback score: sum over pairs of log value and aspect terms.

    Vectorized over the whole item table; each aspect is embedded once per
    feedback pair.  Returns an array of shape (n_items,).
    """
    config = params.config
    items = params.item_emb
    total = np.zeros(items.shape[0])
    for polarity, pairs in (("positive", feedback.positive), ("negative", feedback.negative)):
        for aspect, value in sorted(pairs):
            a_vec = embed_aspect(aspect_tokens[aspect], params)
            if config.use_value_net:
                target = items + a_vec
                if polarity == "positive":
                    total += log_sigmoid(target @ params.value_pos_emb[value])
                elif config.has_negative_table:
                    total += log_sigmoid(target @ params.value_neg_emb[value])
                else:
                    total += log_sigmoid(-(target @ params.value_pos_emb[value]))
            if config.use_aspect_net:
                total += log_sigmoid(items @ a_vec)
    return total


def score_items_feedback(
    user: int | None,
    q0: np.ndarray,
    feedback,
    item_ids: np.ndarray,
    aspect_tokens: Sequence[Sequence[int]],
    params: ModelParams,
) -> np.ndarray:
    """Feedback-adjusted scores for ``item_ids`` (vectorized)."""
    base = params.item_emb @ blend_query_user(q0, user, params)
    if feedback:
        base = base + _feedback_log_terms(feedback, aspect_tokens, params)
    return base[item_ids]


def score_item_feedback(
    user: int | None,
    q0: np.ndarray,
    feedback,
    item: int,
    aspect_tokens: Sequence[Sequence[int]],
    params: ModelParams,
) -> float:
    """Single-item version: initial score plus the summed log feedback terms."""
    ids = np.asarray([item], dtype=np.intp)
    return float(score_items_feedback(user, q0, feedback, ids, aspect_tokens, params)[0])


def rank_items(
    user: int | None,
    query_tokens: Sequence[int],
    feedback,
    candidates: Iterable[int],
    aspect_tokens: Sequence[Sequence[int]],
    params: ModelParams,
) -> list[tuple[int, float]]:
    """Candidates ordered by feedback score descending, ties by item id."""
    ids = np.fromiter(candidates, dtype=np.intp)
    if ids.size == 0:
        raise ModelError("candidate set is empty")
    params.check_finite()
    q0 = project_query(query_tokens, params)
    scores = score_items_feedback(user, q0, feedback, ids, aspect_tokens, params)
    order = np.lexsort((ids, -scores))
    return [(int(ids[k]), float(scores[k])) for k in order]


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIId?????QQQQQ")


def save_params(params: ModelParams, path: str | Path) -> None:
    """Versioned little-endian binary: header then tables in declared order."""
    config = params.config
    header = _HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        config.dim,
        config.query_weight,
        config.use_aspect_net,
        config.use_value_net,
        config.use_negative_values,
        config.separate_negative_table,
        config.share_query_aspect_projection,
        params.word_emb.shape[0],
        params.user_emb.shape[0],
        params.item_emb.shape[0],
        params.aspect_word_emb.shape[0],
        params.value_pos_emb.shape[0],
    )
    with Path(path).open("wb") as fh:
        fh.write(header)
        for name in _table_order(config):
            table = getattr(params, name)
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


def _table_order(config: ModelConfig) -> list[str]:
    order = ["word_emb", "user_emb", "item_emb", "aspect_word_emb", "value_pos_emb"]
    if config.has_negative_table:
        order.append("value_neg_emb")
    order += ["query_proj_W", "query_proj_b"]
    if not config.share_query_aspect_projection:
        order += ["aspect_proj_W", "aspect_proj_b"]
    return order


def load_params(path: str | Path, expected_sizes: CorpusSizes | None = None) -> ModelParams:
    """Read a model file; optionally cross-check vocabulary sizes."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ModelError(f"{path}: truncated model file")
    (
        magic,
        version,
        dim,
        query_weight,
        use_aspect,
        use_value,
        use_neg,
        sep_neg,
        share_proj,
        n_words,
        n_users,
        n_items,
        n_aspect_words,
        n_values,
    ) = _HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic {magic!r})")
    if version != MODEL_VERSION:
        raise ModelError(f"{path}: unsupported model version {version}")
    config = ModelConfig(
        dim=dim,
        query_weight=query_weight,
        use_aspect_net=use_aspect,
        use_value_net=use_value,
        use_negative_values=use_neg,
        separate_negative_table=sep_neg,
        share_query_aspect_projection=share_proj,
    )
    sizes = CorpusSizes(n_words, n_users, n_items, n_aspect_words, n_values)
    if expected_sizes is not None and sizes != expected_sizes:
        raise ModelError(f"{path}: vocabulary sizes {sizes} do not match expected {expected_sizes}")
    shapes = {
        "word_emb": (n_words, dim),
        "user_emb": (n_users, dim),
        "item_emb": (n_items, dim),
        "aspect_word_emb": (n_aspect_words, dim),
        "value_pos_emb": (n_values, dim),
        "value_neg_emb": (n_values, dim),
        "query_proj_W": (dim, dim),
        "query_proj_b": (dim,),
        "aspect_proj_W": (dim, dim),
        "aspect_proj_b": (dim,),
    }
    offset = _HEADER.size
    loaded: dict[str, np.ndarray] = {}
    for name in _table_order(config):
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise ModelError(f"{path}: dimension mismatch while reading {name}")
        loaded[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise ModelError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelParams(
        config=config,
        word_emb=loaded["word_emb"],
        user_emb=loaded["user_emb"],
        item_emb=loaded["item_emb"],
        aspect_word_emb=loaded["aspect_word_emb"],
        value_pos_emb=loaded["value_pos_emb"],
        value_neg_emb=loaded.get("value_neg_emb"),
        query_proj_W=loaded["query_proj_W"],
        query_proj_b=loaded["query_proj_b"],
        aspect_proj_W=loaded.get("aspect_proj_W"),
        aspect_proj_b=loaded.get("aspect_proj_b"),
    )
