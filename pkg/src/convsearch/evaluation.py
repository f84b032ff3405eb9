"""Freezing-rank conversational evaluation, rank metrics, significance test.

Items shown in earlier rounds keep their positions; only the remainder is
re-ranked each round.  Once a relevant item has been shown, the pair's list
is no longer updated.  MAP and MRR are computed at cutoff 100, NDCG at 10,
all with binary relevance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from convsearch.conversation import (
    NO_ANSWER,
    Question,
    SessionRanker,
    SessionState,
    advance_session,
    select_questions,
    simulate_answer,
    start_session,
    target_attributes,
)
from convsearch.corpus import Corpus, Split, EvalPair

METRICS = ("map", "mrr", "ndcg")


def freeze_rank(frozen: Sequence[int], reranked_rest: Sequence[int]) -> list[int]:
    """Frozen prefix followed by the re-ranked remainder; inputs must be disjoint."""
    overlap = set(frozen) & set(reranked_rest)
    if overlap:
        raise ValueError(f"frozen and reranked lists overlap: {sorted(overlap)}")
    return list(frozen) + list(reranked_rest)


def _check_ranked(ranked: Sequence[int]) -> None:
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")


def average_precision(ranked: Sequence[int], relevant: Iterable[int], cutoff: int = 100) -> float:
    """Precision averaged over relevant hits within the cutoff, normalized by
    min(#relevant, cutoff)."""
    _check_ranked(ranked)
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hits = 0
    precision_sum = 0.0
    for rank, item in enumerate(ranked[:cutoff], start=1):
        if item in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / min(len(relevant), cutoff)


def reciprocal_rank(ranked: Sequence[int], relevant: Iterable[int], cutoff: int = 100) -> float:
    _check_ranked(ranked)
    relevant = set(relevant)
    for rank, item in enumerate(ranked[:cutoff], start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


def ndcg_at(ranked: Sequence[int], relevant: Iterable[int], k: int = 10) -> float:
    """Binary-gain NDCG with log2 discounts."""
    _check_ranked(ranked)
    relevant = set(relevant)
    if not relevant:
        return 0.0
    dcg = sum(
        1.0 / math.log2(rank + 1)
        for rank, item in enumerate(ranked[:k], start=1)
        if item in relevant
    )
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def compute_metrics(ranked: Sequence[int], relevant: Iterable[int]) -> dict[str, float]:
    relevant = set(relevant)
    return {
        "map": average_precision(ranked, relevant),
        "mrr": reciprocal_rank(ranked, relevant),
        "ndcg": ndcg_at(ranked, relevant),
    }


# ---------------------------------------------------------------------------
# Conversational protocol
# ---------------------------------------------------------------------------

FeedbackProvider = Callable[[EvalPair, Question], int]


def simulated_feedback(corpus: Corpus) -> FeedbackProvider:
    """Answer questions from the catalog of the pair's target item.

    With several relevant items the lowest item id acts as the target.
    """
    cache: dict[int, dict[int, set[int]]] = {}

    def provider(pair: EvalPair, question: Question) -> int:
        target = min(pair.relevant_items)
        if target not in cache:
            cache[target] = target_attributes(corpus, target)
        return simulate_answer(cache[target], question)

    return provider


@dataclass
class IterationReport:
    iteration: int
    means: dict[str, float]
    per_query: dict[str, list[float]]  # metric -> values in test-pair order
    coverage: float  # share of active pairs with >= 1 non-skip answer
    active_queries: int  # pairs with no relevant item shown before this round

    def check_means(self) -> None:
        for metric, values in self.per_query.items():
            if values and abs(self.means[metric] - sum(values) / len(values)) > 1e-9:
                raise ValueError(f"mean of {metric} inconsistent with per-query values")


@dataclass
class MetricReport:
    iterations: list[IterationReport]
    n_pairs: int
    config: dict = field(default_factory=dict)

    def per_query(self, iteration: int, metric: str) -> list[float]:
        return self.iterations[iteration - 1].per_query[metric]

    def mean(self, iteration: int, metric: str) -> float:
        return self.iterations[iteration - 1].means[metric]


@dataclass
class SessionTrace:
    """Replay record of one evaluated conversation."""

    pair: EvalPair
    lists: list[list[int]]  # full ranked list per iteration
    states: list[SessionState]
    answered: list[bool]  # got >= 1 non-skip answer in the round leading here


def evaluate_conversational(
    ranker: SessionRanker,
    feedback_provider: FeedbackProvider,
    split: Split,
    corpus: Corpus,
    iterations: int = 5,
    m: int = 2,
    strategy: str = "most_mentioned",
    feedback_mode: str = "both",
    seed: int = 0,
    keep_traces: bool = False,
) -> MetricReport | tuple[MetricReport, list[SessionTrace]]:
    """Run every test pair through the freezing-rank protocol.

    Iteration 1 scores the feedback-free ranking.  Afterwards, each round
    asks up to ``m`` questions about the shown non-relevant items, merges
    the answers, and re-ranks only the unshown remainder.  Lists freeze for
    good once a relevant item has been shown.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    rng = np.random.default_rng(seed)
    candidates = list(range(len(corpus.items)))
    traces: list[SessionTrace] = []

    per_iter_values: list[dict[str, list[float]]] = [
        {metric: [] for metric in METRICS} for _ in range(iterations)
    ]
    answered_counts = [0] * iterations
    active_counts = [0] * iterations

    for pair in split.test_pairs:
        state, ranked = start_session(
            pair.user, pair.query, ranker, candidates, relevant=pair.relevant_items
        )
        full = [item for item, _ in ranked]
        lists = [full]
        states = [state]
        answered_flags = [True]  # round 1 touches every query by definition
        active_counts[0] += 1

        for k in range(2, iterations + 1):
            if state.satisfied or state.finished:
                lists.append(lists[-1])
                states.append(state)
                answered_flags.append(False)
                continue
            active_counts[k - 1] += 1
            questions = select_questions(state, corpus, m, strategy, rng)
            answers = [(q, feedback_provider(pair, q)) for q in questions]
            got_answer = any(a != NO_ANSWER for _, a in answers)
            answered_flags.append(got_answer)
            if got_answer:
                answered_counts[k - 1] += 1
            state, ranked = advance_session(
                state,
                answers,
                ranker,
                candidates,
                relevant=pair.relevant_items,
                feedback_mode=feedback_mode,
            )
            frozen = list(state.shown[:-1])
            lists.append(freeze_rank(frozen, [item for item, _ in ranked]))
            states.append(state)

        for k, ranked_list in enumerate(lists):
            metrics = compute_metrics(ranked_list, pair.relevant_items)
            for metric in METRICS:
                per_iter_values[k][metric].append(metrics[metric])
        if keep_traces:
            traces.append(SessionTrace(pair, lists, states, answered_flags))

    reports = []
    n_pairs = len(split.test_pairs)
    for k in range(iterations):
        values = per_iter_values[k]
        means = {
            metric: (sum(vals) / len(vals) if vals else 0.0)
            for metric, vals in values.items()
        }
        if k == 0:
            coverage = 1.0 if n_pairs else 0.0
        else:
            coverage = answered_counts[k] / active_counts[k] if active_counts[k] else 0.0
        report = IterationReport(
            iteration=k + 1,
            means=means,
            per_query=values,
            coverage=coverage,
            active_queries=active_counts[k],
        )
        report.check_means()
        reports.append(report)
    full_report = MetricReport(
        iterations=reports,
        n_pairs=n_pairs,
        config={
            "iterations": iterations,
            "m": m,
            "strategy": strategy,
            "feedback_mode": feedback_mode,
        },
    )
    if keep_traces:
        return full_report, traces
    return full_report


# ---------------------------------------------------------------------------
# Significance testing
# ---------------------------------------------------------------------------


def fisher_randomization_test(
    values_a: Sequence[float],
    values_b: Sequence[float],
    trials: int = 100_000,
    seed: int | np.random.Generator = 0,
) -> float:
    """Two-sided paired randomization test.

    Each trial flips the sign of every paired difference with probability
    one half; the p-value is the share of trials whose absolute mean
    difference is at least the observed one.
    """
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    if a.size == 0:
        raise ValueError("need at least one pair")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    diff = a - b
    observed = abs(float(diff.sum()))  # compare sums: the 1/n factor cancels
    hits = 0
    chunk = max(1, min(trials, (1 << 22) // max(1, a.size)))
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        signs = np.where(rng.random((n, a.size)) < 0.5, 1.0, -1.0)
        stats = np.abs(signs @ diff)
        hits += int(np.count_nonzero(stats >= observed))
        done += n
    return hits / trials


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("iteration", "metric", "mean", "n_queries", "coverage", "active_queries")


def report_rows(report: MetricReport) -> list[dict]:
    rows = []
    for it in report.iterations:
        for metric in METRICS:
            rows.append(
                {
                    "iteration": it.iteration,
                    "metric": metric,
                    "mean": it.means[metric],
                    "n_queries": report.n_pairs,
                    "coverage": it.coverage,
                    "active_queries": it.active_queries,
                }
            )
    return rows


def emit_report(report: MetricReport, path: str | Path, format: str = "csv") -> None:
    """Write per-iteration rows as CSV or JSON (same numbers either way)."""
    path = Path(path)
    rows = report_rows(report)
    if format == "csv":
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    elif format == "json":
        path.write_text(
            json.dumps({"config": report.config, "rows": rows}, indent=1, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    else:
        raise ValueError(f"unknown report format: {format!r}")
