"""Maximum-likelihood training with negative sampling and hand-derived gradients.

One training conversation couples a purchase (user, query, item) with the
review's word targets, sampled non-relevant items, and aspect-value feedback
simulated against those non-relevant items.  Every term of the objective is
a log-sigmoid of a dot product, so gradients are closed form and touch only
the parameter rows referenced by the instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from convsearch.corpus import Corpus, Split
from convsearch.model import (
    CorpusSizes,
    ModelConfig,
    ModelParams,
    init_params,
    log_sigmoid,
    sigmoid,
)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr0: float = 0.5
    grad_clip_global_norm: float = 5.0
    beta: int = 5
    l2_gamma: float = 0.0
    subsample_rate: float = 1e-5
    nonrel_items_per_conv: int = 2
    seed: int = 13

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.beta < 1:
            raise TrainingError("epochs must be >= 0, batch_size and beta >= 1")
        if self.lr0 < 0 or self.grad_clip_global_norm <= 0 or self.l2_gamma < 0:
            raise TrainingError("lr0 must be >= 0; clip norm positive; l2_gamma >= 0")
        if self.subsample_rate <= 0 or self.nonrel_items_per_conv < 1:
            raise TrainingError("subsample_rate and nonrel_items_per_conv must be positive")


class Categorical:
    """Discrete distribution with O(log n) sampling via the inverse CDF."""

    def __init__(self, weights: np.ndarray) -> None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0 or np.any(weights < 0):
            raise TrainingError("weights must be a non-negative 1-D vector")
        total = weights.sum()
        if total <= 0:
            raise TrainingError("distribution has empty support")
        self.probs = weights / total
        self.cdf = np.cumsum(self.probs)
        self.cdf[-1] = 1.0

    def __len__(self) -> int:
        return self.probs.size

    def draw(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return np.searchsorted(self.cdf, rng.random(k), side="right")


@dataclass
class SamplingDists:
    """Negative-sampling distributions plus raw word frequencies."""

    word_dist: Categorical
    item_dist: Categorical
    aspect_dist: Categorical | None
    value_dist: Categorical | None
    word_freq: np.ndarray

    def check_normalized(self) -> None:
        for dist in (self.word_dist, self.item_dist, self.aspect_dist, self.value_dist):
            if dist is not None and abs(float(dist.probs.sum()) - 1.0) > 1e-12:
                raise TrainingError("sampling distribution does not sum to 1")


def build_sampling_dists(corpus: Corpus) -> SamplingDists:
    """Words follow the unigram distribution raised to the 3/4 power; items,
    aspects and values are sampled uniformly."""
    counts = np.asarray(corpus.review_vocab.count_of, dtype=np.float64)
    return SamplingDists(
        word_dist=Categorical(counts**0.75),
        item_dist=Categorical(np.ones(len(corpus.items))),
        aspect_dist=Categorical(np.ones(len(corpus.aspects))) if corpus.aspects else None,
        value_dist=(
            Categorical(np.ones(len(corpus.value_vocab))) if len(corpus.value_vocab) else None
        ),
        word_freq=counts / counts.sum(),
    )


def subsample_keep(word: int, dists: SamplingDists, rate: float, rng: np.random.Generator) -> bool:
    """Keep a review word with probability min(1, sqrt(rate / frequency))."""
    if rate <= 0:
        raise TrainingError("subsample rate must be positive")
    freq = dists.word_freq[word]
    if freq <= rate:
        return True
    return rng.random() < math.sqrt(rate / freq)


def sample_negatives(
    dist: Categorical, exclude: set[int] | frozenset[int], beta: int, rng: np.random.Generator
) -> np.ndarray:
    """beta i.i.d. draws from ``dist``, rejecting ids in ``exclude``."""
    excluded_ids = np.fromiter(exclude, dtype=np.intp) if exclude else None
    if excluded_ids is not None:
        available = 1.0 - float(np.sum(dist.probs[excluded_ids]))
        if available <= 1e-12:
            raise TrainingError("negative-sampling support exhausted by the exclusion set")
    out = np.empty(beta, dtype=np.intp)
    filled = 0
    while filled < beta:
        draws = dist.draw(max(beta - filled, 8), rng)
        if excluded_ids is not None:
            draws = draws[~np.isin(draws, excluded_ids)]
        take = min(draws.size, beta - filled)
        out[filled : filled + take] = draws[:take]
        filled += take
    return out


def _sample_negative_rows(
    dist: Categorical, exclude_per_row: np.ndarray, beta: int, rng: np.random.Generator
) -> np.ndarray:
    """One row of beta rejected draws per excluded id (vectorized rejection)."""
    n = exclude_per_row.size
    if n == 0:
        return np.empty((0, beta), dtype=np.intp)
    if len(dist) < 2:
        raise TrainingError("negative-sampling support exhausted by the exclusion set")
    out = dist.draw(n * beta, rng).reshape(n, beta)
    bad = out == exclude_per_row[:, None]
    while bad.any():
        out[bad] = dist.draw(int(bad.sum()), rng)
        bad = out == exclude_per_row[:, None]
    return out.astype(np.intp)


@dataclass
class TrainInstance:
    """One conversation's sampled training targets.

    Aspect token lists for every aspect id referenced anywhere in the
    instance are carried along, so the loss needs no corpus access.
    """

    user: int
    query_tokens: tuple[int, ...]
    item: int
    review_words: list[int]
    user_word_negatives: np.ndarray  # (len(review_words), beta)
    item_word_negatives: np.ndarray  # (len(review_words), beta)
    item_negatives: np.ndarray  # (beta,)
    observed_aspects: list[int]  # conversation aspects, all in the item's catalog
    aspect_negatives: np.ndarray  # (len(observed_aspects), beta), drawn outside observed
    pos_pairs: list[tuple[int, int]]  # (aspect, value) with positive feedback
    pos_value_negatives: np.ndarray  # (len(pos_pairs), beta)
    neg_pairs: list[tuple[int, int]]  # (aspect, value) with negative feedback
    neg_value_negatives: np.ndarray  # (len(neg_pairs), beta)
    aspect_tokens: dict[int, tuple[int, ...]] = field(default_factory=dict)


def simulate_training_feedback(
    target_attrs: dict[int, set[int]], nonrel_pairs: Sequence[tuple[int, int]]
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Match each non-relevant item's (aspect, value) against the purchased
    item's catalog: shared aspect and matching value -> positive, shared
    aspect and different value -> negative, unknown aspect -> no answer."""
    pos: set[tuple[int, int]] = set()
    neg: set[tuple[int, int]] = set()
    for aspect, value in nonrel_pairs:
        values = target_attrs.get(aspect)
        if values is None:
            continue
        if value in values:
            pos.add((aspect, value))
        else:
            neg.add((aspect, value))
    return sorted(pos), sorted(neg - pos)


def _item_attrs(corpus: Corpus) -> dict[int, dict[int, set[int]]]:
    attrs: dict[int, dict[int, set[int]]] = {}
    for pair in corpus.av_catalog:
        attrs.setdefault(pair.item, {}).setdefault(pair.aspect, set()).add(pair.value)
    return attrs


def _item_pairs(corpus: Corpus) -> dict[int, list[tuple[int, int]]]:
    pairs: dict[int, list[tuple[int, int]]] = {}
    for pair in corpus.av_catalog:
        pairs.setdefault(pair.item, []).append((pair.aspect, pair.value))
    return pairs


def train_conversation_base(split: Split, corpus: Corpus) -> list[tuple[int, tuple[int, ...]]]:
    """The deterministic (review index, query) list instances are drawn from."""
    base = []
    for idx in split.train_reviews:
        item = corpus.reviews[idx].item
        for query in split.train_queries(corpus, item):
            base.append((idx, query))
    return base


def build_instance(
    user: int,
    query_tokens: Sequence[int],
    item: int,
    review_tokens: Sequence[int],
    corpus: Corpus,
    dists: SamplingDists,
    config: TrainConfig,
    rng: np.random.Generator,
    attrs: dict[int, dict[int, set[int]]] | None = None,
    pairs_of: dict[int, list[tuple[int, int]]] | None = None,
    include_av: bool = True,
) -> TrainInstance:
    beta = config.beta
    if attrs is None:
        attrs = _item_attrs(corpus)
    if pairs_of is None:
        pairs_of = _item_pairs(corpus)

    tokens = np.asarray(review_tokens, dtype=np.intp)
    freq = np.maximum(dists.word_freq[tokens], 1e-300)
    keep_prob = np.minimum(1.0, np.sqrt(config.subsample_rate / freq))
    kept_arr = tokens[rng.random(tokens.size) < keep_prob]
    kept = kept_arr.tolist()
    user_word_negs = _sample_negative_rows(dists.word_dist, kept_arr, beta, rng)
    item_word_negs = _sample_negative_rows(dists.word_dist, kept_arr, beta, rng)
    item_negs = sample_negatives(dists.item_dist, {item}, beta, rng)

    pos_pairs: list[tuple[int, int]] = []
    neg_pairs: list[tuple[int, int]] = []
    if include_av and dists.aspect_dist is not None:
        nonrel = sample_negatives(dists.item_dist, {item}, config.nonrel_items_per_conv, rng)
        shown_pairs: list[tuple[int, int]] = []
        for other in nonrel:
            shown_pairs.extend(pairs_of.get(int(other), []))
        pos_pairs, neg_pairs = simulate_training_feedback(attrs.get(item, {}), shown_pairs)

    observed = sorted({a for a, _ in pos_pairs} | {a for a, _ in neg_pairs})
    aspect_negs = np.empty((len(observed), beta), dtype=np.intp)
    if observed:
        exclude = set(observed)
        for j in range(len(observed)):
            aspect_negs[j] = sample_negatives(dists.aspect_dist, exclude, beta, rng)

    def value_negs(pairs: list[tuple[int, int]]) -> np.ndarray:
        out = np.empty((len(pairs), beta), dtype=np.intp)
        for j, (_, v) in enumerate(pairs):
            out[j] = sample_negatives(dists.value_dist, {v}, beta, rng)
        return out

    referenced = set(observed) | {int(a) for a in aspect_negs.ravel()}
    aspect_tokens = {a: tuple(corpus.aspects[a]) for a in sorted(referenced)}
    return TrainInstance(
        user=user,
        query_tokens=tuple(query_tokens),
        item=item,
        review_words=kept,
        user_word_negatives=user_word_negs,
        item_word_negatives=item_word_negs,
        item_negatives=item_negs,
        observed_aspects=observed,
        aspect_negatives=aspect_negs,
        pos_pairs=pos_pairs,
        pos_value_negatives=value_negs(pos_pairs),
        neg_pairs=neg_pairs,
        neg_value_negatives=value_negs(neg_pairs),
        aspect_tokens=aspect_tokens,
    )


def build_train_conversations(
    split: Split,
    corpus: Corpus,
    config: TrainConfig,
    seed: int | np.random.Generator,
    include_av: bool = True,
    shuffle: bool = True,
) -> Iterator[TrainInstance]:
    """Yield one epoch of training instances with fresh negative samples."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dists = build_sampling_dists(corpus)
    attrs = _item_attrs(corpus)
    pairs_of = _item_pairs(corpus)
    base = train_conversation_base(split, corpus)
    order = rng.permutation(len(base)) if shuffle else np.arange(len(base))
    for pos in order:
        review_idx, query = base[pos]
        review = corpus.reviews[review_idx]
        yield build_instance(
            review.user,
            query,
            review.item,
            review.tokens,
            corpus,
            dists,
            config,
            rng,
            attrs=attrs,
            pairs_of=pairs_of,
            include_av=include_av,
        )


# ---------------------------------------------------------------------------
# Loss structure shared by the gradient and loss-only evaluators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ValueGroup:
    table: str  # "value_pos_emb" or "value_neg_emb"
    aspect: int
    ids: np.ndarray  # value target followed by sampled non-values
    signs: np.ndarray


@dataclass(frozen=True)
class _LossStructure:
    """Which terms the configuration keeps, and which rows they touch.

    Depends only on the instance and the model configuration, so it can be
    computed once and reused across repeated loss evaluations (as the
    finite-difference checker does).
    """

    occurrence_aspects: tuple[int, ...]  # one entry per kept feedback pair
    nonoccurrence_aspects: tuple[int, ...]  # sampled non-aspects, one term per draw
    value_groups: tuple[_ValueGroup, ...]
    referenced_aspects: tuple[int, ...]
    aspect_token_arrays: dict[int, np.ndarray]
    aspect_tokens_concat: np.ndarray  # all referenced aspects' tokens, concatenated
    aspect_token_starts: np.ndarray  # segment starts into the concatenation
    aspect_token_counts: np.ndarray
    aspect_term_index: np.ndarray  # positions into referenced_aspects, occ then nonocc
    aspect_term_signs: np.ndarray
    words_arr: np.ndarray  # review words as an index array
    query_arr: np.ndarray
    lm_user_ids: np.ndarray  # review words followed by the user-side negatives
    lm_item_ids: np.ndarray
    lm_signs: np.ndarray
    touched: dict[str, np.ndarray]  # embedding-table rows subject to L2


def _loss_structure(instance: TrainInstance, config: ModelConfig) -> _LossStructure:
    pairs_in_loss: list[tuple[int, int, str]] = [(a, v, "pos") for a, v in instance.pos_pairs]
    if config.use_negative_values:
        pairs_in_loss += [(a, v, "neg") for a, v in instance.neg_pairs]

    occurrence: tuple[int, ...] = ()
    nonoccurrence: tuple[int, ...] = ()
    if config.use_aspect_net:
        occurrence = tuple(a for a, _, _ in pairs_in_loss)
        nonoccurrence = tuple(int(a) for a in instance.aspect_negatives.ravel())

    value_groups: list[_ValueGroup] = []
    if config.use_value_net:
        beta_rows = {"pos": instance.pos_value_negatives, "neg": instance.neg_value_negatives}
        offsets: dict[str, dict[tuple[int, int], int]] = {"pos": {}, "neg": {}}
        for j, (a, v) in enumerate(instance.pos_pairs):
            offsets["pos"][(a, v)] = j
        for j, (a, v) in enumerate(instance.neg_pairs):
            offsets["neg"][(a, v)] = j
        for a, v, polarity in pairs_in_loss:
            negs = beta_rows[polarity][offsets[polarity][(a, v)]]
            if polarity == "pos" or config.has_negative_table:
                table = "value_pos_emb" if polarity == "pos" else "value_neg_emb"
                signs = np.concatenate(([1.0], -np.ones(negs.size)))
            else:
                # Shared table: the negative-value probability is 1 - sigmoid,
                # which flips every sign on the positive table.
                table = "value_pos_emb"
                signs = np.concatenate(([-1.0], np.ones(negs.size)))
            value_groups.append(
                _ValueGroup(table, a, np.concatenate(([v], negs)).astype(np.intp), signs)
            )

    referenced = sorted(
        set(occurrence) | set(nonoccurrence) | {g.aspect for g in value_groups}
    )
    position = {a: k for k, a in enumerate(referenced)}
    aspect_term_index = np.asarray(
        [position[a] for a in occurrence] + [position[a] for a in nonoccurrence], dtype=np.intp
    )
    aspect_term_signs = np.concatenate(
        (np.ones(len(occurrence)), -np.ones(len(nonoccurrence)))
    )

    touched_sets: dict[str, set[int]] = {}

    def touch(table: str, ids) -> None:
        touched_sets.setdefault(table, set()).update(int(i) for i in ids)

    touch("word_emb", instance.review_words)
    touch("word_emb", instance.user_word_negatives.ravel())
    touch("word_emb", instance.item_word_negatives.ravel())
    touch("word_emb", instance.query_tokens)
    touch("user_emb", [instance.user])
    touch("item_emb", [instance.item])
    touch("item_emb", instance.item_negatives)
    for a in referenced:
        touch("aspect_word_emb", instance.aspect_tokens[a])
    for group in value_groups:
        touch(group.table, group.ids)
    touched = {
        table: np.asarray(sorted(ids), dtype=np.intp) for table, ids in touched_sets.items()
    }

    token_arrays = {a: np.asarray(instance.aspect_tokens[a], dtype=np.intp) for a in referenced}
    counts = np.asarray([token_arrays[a].size for a in referenced], dtype=np.intp)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1])) if referenced else np.empty(0, np.intp)
    concat = (
        np.concatenate([token_arrays[a] for a in referenced])
        if referenced
        else np.empty(0, np.intp)
    )
    words_arr = np.asarray(instance.review_words, dtype=np.intp)
    lm_signs = np.concatenate(
        (np.ones(words_arr.size), -np.ones(instance.user_word_negatives.size))
    )
    return _LossStructure(
        occurrence_aspects=occurrence,
        nonoccurrence_aspects=nonoccurrence,
        value_groups=tuple(value_groups),
        referenced_aspects=tuple(referenced),
        aspect_token_arrays=token_arrays,
        aspect_tokens_concat=concat,
        aspect_token_starts=starts.astype(np.intp),
        aspect_token_counts=counts,
        aspect_term_index=aspect_term_index,
        aspect_term_signs=aspect_term_signs,
        words_arr=words_arr,
        query_arr=np.asarray(instance.query_tokens, dtype=np.intp),
        lm_user_ids=np.concatenate((words_arr, instance.user_word_negatives.ravel())),
        lm_item_ids=np.concatenate((words_arr, instance.item_word_negatives.ravel())),
        lm_signs=lm_signs,
        touched=touched,
    )


def _compose_aspects(
    structure: _LossStructure, params: ModelParams
) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Embed every referenced aspect once.

    Returns (embedding matrix, per-aspect token means, aspect id -> row).
    """
    W, b = params.aspect_projection()
    emb = params.aspect_word_emb[structure.aspect_tokens_concat]
    sums = np.add.reduceat(emb, structure.aspect_token_starts, axis=0)
    means = sums / structure.aspect_token_counts[:, None]
    mat = np.tanh(means @ W.T + b)
    return mat, means, {a: k for k, a in enumerate(structure.referenced_aspects)}


def instance_loss(
    instance: TrainInstance,
    params: ModelParams,
    gamma: float = 0.0,
    structure: _LossStructure | None = None,
) -> float:
    """Loss of one instance without gradients (used by the numeric checker)."""
    config = params.config
    if structure is None:
        structure = _loss_structure(instance, config)
    user_vec = params.user_emb[instance.user]
    item_vec = params.item_emb[instance.item]
    loss = 0.0

    if structure.words_arr.size:
        for owner_vec, ids in (
            (user_vec, structure.lm_user_ids),
            (item_vec, structure.lm_item_ids),
        ):
            x = params.word_emb[ids] @ owner_vec
            loss -= float(log_sigmoid(structure.lm_signs * x).sum())

    q0 = np.tanh(
        params.query_proj_W @ params.word_emb[structure.query_arr].mean(axis=0)
        + params.query_proj_b
    )
    lam = config.query_weight
    blend = lam * q0 + (1.0 - lam) * user_vec
    loss -= float(log_sigmoid(item_vec @ blend))
    loss -= float(log_sigmoid(-(params.item_emb[instance.item_negatives] @ blend)).sum())

    if structure.referenced_aspects:
        aspect_mat, _, row_of = _compose_aspects(structure, params)
        if structure.aspect_term_index.size:
            x = aspect_mat[structure.aspect_term_index] @ item_vec
            loss -= float(log_sigmoid(structure.aspect_term_signs * x).sum())
        for group in structure.value_groups:
            target = item_vec + aspect_mat[row_of[group.aspect]]
            x = getattr(params, group.table)[group.ids] @ target
            loss -= float(log_sigmoid(group.signs * x).sum())

    if gamma:
        for table, rows in structure.touched.items():
            arr = getattr(params, table)[rows]
            loss += gamma * float(np.sum(arr * arr))
    return loss


class SparseGrads:
    """Gradient of one instance: touched embedding rows plus dense projections."""

    def __init__(self) -> None:
        self.rows: dict[str, dict[int, np.ndarray]] = {}
        self.dense: dict[str, np.ndarray] = {}

    def add_row(self, table: str, idx: int, vec: np.ndarray) -> None:
        rows = self.rows.setdefault(table, {})
        if idx in rows:
            rows[idx] = rows[idx] + vec
        else:
            rows[idx] = np.asarray(vec, dtype=np.float64).copy()

    def add_dense(self, name: str, arr: np.ndarray) -> None:
        if name in self.dense:
            self.dense[name] = self.dense[name] + arr
        else:
            self.dense[name] = np.asarray(arr, dtype=np.float64).copy()

    def global_norm(self) -> float:
        total = 0.0
        for rows in self.rows.values():
            for vec in rows.values():
                total += float(vec @ vec)
        for arr in self.dense.values():
            total += float(np.sum(arr * arr))
        return math.sqrt(total)

    def scale(self, factor: float) -> None:
        for rows in self.rows.values():
            for idx in rows:
                rows[idx] = rows[idx] * factor
        for name in self.dense:
            self.dense[name] = self.dense[name] * factor


def _sigmoid_group(left: np.ndarray, rights: np.ndarray, signs: np.ndarray):
    """Negative log likelihood of terms sign_j * (rights_j . left).

    Returns (loss, d/d left, d/d rights as a (k, d) matrix).
    """
    x = rights @ left
    sx = signs * x
    loss = float(-log_sigmoid(sx).sum())
    coef = -signs * sigmoid(-sx)
    return loss, coef @ rights, coef[:, None] * left[None, :]


def loss_and_grads(
    instance: TrainInstance,
    params: ModelParams,
    gamma: float = 0.0,
    structure: _LossStructure | None = None,
) -> tuple[float, SparseGrads]:
    """Loss of one instance and its sparse gradient.

    Raises :class:`TrainingError` naming the term if any component is
    non-finite.
    """
    config = params.config
    if structure is None:
        structure = _loss_structure(instance, config)
    grads = SparseGrads()
    terms: dict[str, float] = {}

    user_vec = params.user_emb[instance.user]
    item_vec = params.item_emb[instance.item]
    d_user = np.zeros(config.dim)
    d_item = np.zeros(config.dim)

    # --- user / item language models ---------------------------------------
    for name, owner_vec, ids in (
        ("user_lm", user_vec, structure.lm_user_ids),
        ("item_lm", item_vec, structure.lm_item_ids),
    ):
        if ids.size == 0:
            terms[name] = 0.0
            continue
        lj, d_left, d_rights = _sigmoid_group(owner_vec, params.word_emb[ids], structure.lm_signs)
        terms[name] = lj
        if name == "user_lm":
            d_user += d_left
        else:
            d_item += d_left
        uniq, inverse = np.unique(ids, return_inverse=True)
        acc = np.zeros((uniq.size, config.dim))
        np.add.at(acc, inverse, d_rights)
        for k, wid in enumerate(uniq):
            grads.add_row("word_emb", int(wid), acc[k])

    # --- item generation -----------------------------------------------------
    lam = config.query_weight
    q_tokens = np.asarray(instance.query_tokens, dtype=np.intp)
    q_mean = params.word_emb[q_tokens].mean(axis=0)
    q0 = np.tanh(params.query_proj_W @ q_mean + params.query_proj_b)
    blend = lam * q0 + (1.0 - lam) * user_vec
    ig_ids = np.concatenate(([instance.item], instance.item_negatives))
    ig_signs = np.concatenate(([1.0], -np.ones(instance.item_negatives.size)))
    loss_ig, d_blend, d_ig_rows = _sigmoid_group(blend, params.item_emb[ig_ids], ig_signs)
    terms["item_gen"] = loss_ig
    d_user += (1.0 - lam) * d_blend
    d_item += d_ig_rows[0]
    for k in range(1, ig_ids.size):
        grads.add_row("item_emb", int(ig_ids[k]), d_ig_rows[k])
    d_hidden = (1.0 - q0 * q0) * (lam * d_blend)
    grads.add_dense("query_proj_W", np.outer(d_hidden, q_mean))
    grads.add_dense("query_proj_b", d_hidden)
    d_q_mean = params.query_proj_W.T @ d_hidden
    for w in q_tokens:
        grads.add_row("word_emb", int(w), d_q_mean / q_tokens.size)

    # --- aspect and value terms ----------------------------------------------
    loss_aspects = 0.0
    loss_values = 0.0
    if structure.referenced_aspects:
        aspect_mat, aspect_means, row_of = _compose_aspects(structure, params)
        d_aspect = np.zeros_like(aspect_mat)

        if structure.aspect_term_index.size:
            rows = aspect_mat[structure.aspect_term_index]
            x = rows @ item_vec
            sx = structure.aspect_term_signs * x
            loss_aspects = float(-log_sigmoid(sx).sum())
            coef = -structure.aspect_term_signs * sigmoid(-sx)
            d_item += coef @ rows
            np.add.at(d_aspect, structure.aspect_term_index, coef[:, None] * item_vec[None, :])

        for j, group in enumerate(structure.value_groups):
            row = row_of[group.aspect]
            target = item_vec + aspect_mat[row]
            table = getattr(params, group.table)
            lg, d_target, d_rows = _sigmoid_group(target, table[group.ids], group.signs)
            loss_values += lg
            d_item += d_target
            d_aspect[row] += d_target
            for k, vid in enumerate(group.ids):
                grads.add_row(group.table, int(vid), d_rows[k])

        # Chain composed aspects through their tanh projection.
        W_name, b_name = (
            ("query_proj_W", "query_proj_b")
            if config.share_query_aspect_projection
            else ("aspect_proj_W", "aspect_proj_b")
        )
        W_a, _ = params.aspect_projection()
        for k, a in enumerate(structure.referenced_aspects):
            tokens = structure.aspect_token_arrays[a]
            a_vec = aspect_mat[k]
            dh = (1.0 - a_vec * a_vec) * d_aspect[k]
            grads.add_dense(W_name, np.outer(dh, aspect_means[k]))
            grads.add_dense(b_name, dh)
            d_mean = W_a.T @ dh
            for w in tokens:
                grads.add_row("aspect_word_emb", int(w), d_mean / tokens.size)
    terms["aspect_gen"] = loss_aspects
    terms["value_gen"] = loss_values

    grads.add_row("user_emb", instance.user, d_user)
    grads.add_row("item_emb", instance.item, d_item)

    # --- L2 over touched embedding rows ---------------------------------------
    if gamma:
        reg = 0.0
        for table, rows in structure.touched.items():
            arr = getattr(params, table)
            for idx in rows:
                row = arr[idx]
                reg += gamma * float(row @ row)
                grads.add_row(table, int(idx), 2.0 * gamma * row)
        terms["l2"] = reg

    loss = float(sum(terms.values()))
    if not math.isfinite(loss):
        bad = [name for name, value in terms.items() if not math.isfinite(value)]
        raise TrainingError(f"non-finite loss in term(s): {', '.join(bad)}")
    return loss, grads


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------


def sgd_step(
    params: ModelParams, grads: SparseGrads, lr: float, clip_norm: float = 5.0
) -> None:
    """Clip the instance gradient to ``clip_norm`` and apply one SGD update."""
    if lr < 0:
        raise TrainingError("learning rate must be >= 0")
    norm = grads.global_norm()
    if norm > clip_norm:
        grads.scale(clip_norm / norm)
    for table, rows in grads.rows.items():
        arr = getattr(params, table)
        for idx, vec in rows.items():
            arr[idx] -= lr * vec
    for name, grad in grads.dense.items():
        getattr(params, name)[...] -= lr * grad


def learning_rate(lr0: float, step: int, total_steps: int) -> float:
    """Linear decay from lr0 toward 0 over the training run."""
    if total_steps <= 0:
        return lr0
    return lr0 * (1.0 - step / total_steps)


def train(
    corpus: Corpus,
    split: Split,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Train on the split's conversations; returns params and per-epoch mean loss."""
    seq = np.random.SeedSequence(train_config.seed)
    init_seed, stream_seed = seq.spawn(2)
    params = init_params(
        model_config, CorpusSizes.of(corpus), int(init_seed.generate_state(1)[0])
    )
    rng = np.random.default_rng(stream_seed)
    include_av = model_config.use_aspect_net or model_config.use_value_net
    base_size = len(train_conversation_base(split, corpus))
    if base_size == 0:
        raise TrainingError("no training conversations (empty split or no train queries)")
    steps_per_epoch = math.ceil(base_size / train_config.batch_size)
    total_steps = train_config.epochs * steps_per_epoch
    trace: list[float] = []
    step = 0
    for _ in range(train_config.epochs):
        epoch_loss = 0.0
        seen = 0
        stream = build_train_conversations(
            split, corpus, train_config, rng, include_av=include_av
        )
        batch: list[TrainInstance] = []

        def flush() -> None:
            nonlocal epoch_loss, seen, step, batch
            if not batch:
                return
            lr = learning_rate(train_config.lr0, step, total_steps)
            for inst in batch:
                loss, grads = loss_and_grads(inst, params, train_config.l2_gamma)
                sgd_step(params, grads, lr, train_config.grad_clip_global_norm)
                epoch_loss += loss
            seen += len(batch)
            batch = []
            step += 1

        for instance in stream:
            batch.append(instance)
            if len(batch) == train_config.batch_size:
                flush()
        flush()
        trace.append(epoch_loss / seen)
    return params, trace


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------


def random_check_instance(
    rng: np.random.Generator,
    sizes: CorpusSizes,
    beta: int = 2,
    n_words: int = 2,
    n_aspects_total: int = 6,
) -> TrainInstance:
    """Small random instance for gradient checking (not tied to a corpus)."""
    pos_pairs = sorted({(int(rng.integers(n_aspects_total)), int(rng.integers(sizes.n_values)))})
    neg_pairs = sorted(
        {(int(rng.integers(n_aspects_total)), int(rng.integers(sizes.n_values)))} - set(pos_pairs)
    )
    observed = sorted({a for a, _ in pos_pairs} | {a for a, _ in neg_pairs})
    others = [a for a in range(n_aspects_total) if a not in observed]
    aspect_negs = np.asarray(
        [rng.choice(others, size=beta).tolist() for _ in observed], dtype=np.intp
    ).reshape(len(observed), beta)
    aspect_tokens = {
        int(a): tuple(
            rng.integers(0, sizes.n_aspect_words, size=int(rng.integers(1, 3))).tolist()
        )
        for a in set(observed) | set(int(x) for x in aspect_negs.ravel())
    }

    def value_negs(pairs):
        return np.asarray(
            [
                rng.choice([x for x in range(sizes.n_values) if x != v], size=beta).tolist()
                for _, v in pairs
            ],
            dtype=np.intp,
        ).reshape(len(pairs), beta)

    return TrainInstance(
        user=int(rng.integers(sizes.n_users)),
        query_tokens=tuple(rng.integers(0, sizes.n_words, size=2).tolist()),
        item=int(rng.integers(sizes.n_items)),
        review_words=rng.integers(0, sizes.n_words, size=n_words).tolist(),
        user_word_negatives=rng.integers(0, sizes.n_words, size=(n_words, beta)).astype(np.intp),
        item_word_negatives=rng.integers(0, sizes.n_words, size=(n_words, beta)).astype(np.intp),
        item_negatives=rng.integers(0, sizes.n_items, size=beta).astype(np.intp),
        observed_aspects=observed,
        aspect_negatives=aspect_negs,
        pos_pairs=pos_pairs,
        pos_value_negatives=value_negs(pos_pairs),
        neg_pairs=neg_pairs,
        neg_value_negatives=value_negs(neg_pairs),
        aspect_tokens=aspect_tokens,
    )


def finite_difference_check(
    params: ModelParams,
    instance: TrainInstance,
    eps: float = 1e-4,
    gamma: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over every parameter scalar the instance touches.

    The relative error is |g_a - g_n| / (|g_a| + |g_n| + 1e-12).  Central
    differences cannot resolve gradients below their own truncation scale,
    so absolute disagreements smaller than eps^2 count as agreement (at the
    default eps both sides then match to ~1e-8).
    """
    if eps <= 0:
        raise TrainingError("eps must be positive")
    resolution = eps * eps
    structure = _loss_structure(instance, params.config)
    _, grads = loss_and_grads(instance, params, gamma, structure)
    work = params.copy()

    def central(arr: np.ndarray, index) -> float:
        original = arr[index]
        arr[index] = original + eps
        hi = instance_loss(instance, work, gamma, structure)
        arr[index] = original - eps
        lo = instance_loss(instance, work, gamma, structure)
        arr[index] = original
        return (hi - lo) / (2.0 * eps)

    def rel_error(analytic: float, numeric: float) -> float:
        gap = abs(analytic - numeric)
        if gap <= resolution:
            return 0.0
        return gap / (abs(analytic) + abs(numeric) + 1e-12)

    worst = 0.0
    for table, rows in grads.rows.items():
        arr = getattr(work, table)
        for idx, gvec in rows.items():
            for k in range(gvec.size):
                worst = max(worst, rel_error(float(gvec[k]), central(arr, (idx, k))))
    for name, grad in grads.dense.items():
        arr = getattr(work, name)
        flat_grad = grad.ravel()
        flat_arr = arr.reshape(-1)
        for k in range(flat_grad.size):
            worst = max(worst, rel_error(float(flat_grad[k]), central(flat_arr, k)))
    return worst
