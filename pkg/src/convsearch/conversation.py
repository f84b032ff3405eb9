"""Conversation state machine shared by training simulation, evaluation,
and the live service.

Each round shows one item, asks up to ``m`` yes/no questions about
aspect-value pairs of the non-relevant items shown so far, and advances to
the next top-ranked item under the accumulated feedback.  Answers are
+1 (yes), -1 (no) or 0 (no answer / skip).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

import numpy as np

from convsearch.corpus import Corpus
from convsearch.model import FeedbackSet

YES = 1
NO = -1
NO_ANSWER = 0

FEEDBACK_MODES = ("both", "positive", "negative", "none")


class SessionRanker(Protocol):
    """Anything that can order candidate items for a session round."""

    def rank(
        self,
        user: int | None,
        query_tokens: Sequence[int],
        feedback: FeedbackSet,
        shown: Sequence[int],
        candidates: Iterable[int],
    ) -> list[tuple[int, float]]: ...


@dataclass(frozen=True)
class Question:
    aspect: int
    value: int
    text: str


def make_question(corpus: Corpus, aspect: int, value: int) -> Question:
    return Question(
        aspect=aspect,
        value=value,
        text=f"Do you want {corpus.aspect_words(aspect)} to be "
        f"{corpus.value_vocab.entries[value]}?",
    )


@dataclass(frozen=True)
class SessionState:
    """One conversation.  ``shown`` is ordered and duplicate-free; ``asked``
    covers every pair ever posed, answered or not."""

    user: int | None
    query_tokens: tuple[int, ...]
    shown: tuple[int, ...] = ()
    feedback: FeedbackSet = field(default_factory=FeedbackSet)
    asked: frozenset[tuple[int, int]] = frozenset()
    finished: bool = False
    satisfied: bool = False  # a relevant item has been shown (evaluation mode)

    @property
    def iteration(self) -> int:
        return len(self.shown)

    def check_invariants(self) -> None:
        if len(set(self.shown)) != len(self.shown):
            raise ValueError("shown items contain duplicates")
        if not (self.feedback.positive | self.feedback.negative) <= self.asked:
            raise ValueError("feedback contains pairs that were never asked")


def select_questions(
    state: SessionState,
    corpus: Corpus,
    m: int,
    strategy: str = "most_mentioned",
    rng: np.random.Generator | None = None,
) -> list[Question]:
    """Pick up to ``m`` unasked aspect-value pairs from the shown items.

    ``most_mentioned`` orders by summed review-mention counts (ties by
    aspect then value id); ``random`` samples uniformly without replacement.
    Returns fewer than ``m`` questions when the pool is exhausted.
    """
    if state.finished:
        raise ValueError("session is finished")
    if not state.shown:
        raise ValueError("no items have been shown yet")
    shown = set(state.shown)
    mentions: dict[tuple[int, int], int] = {}
    for pair in corpus.av_catalog:
        if pair.item in shown:
            key = (pair.aspect, pair.value)
            if key not in state.asked:
                mentions[key] = mentions.get(key, 0) + pair.mentions
    pool = sorted(mentions)
    if not pool:
        return []
    if strategy == "most_mentioned":
        pool.sort(key=lambda key: (-mentions[key], key[0], key[1]))
        chosen = pool[:m]
    elif strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        order = rng.permutation(len(pool))
        chosen = [pool[i] for i in order[: min(m, len(pool))]]
    else:
        raise ValueError(f"unknown question strategy: {strategy!r}")
    return [make_question(corpus, a, v) for a, v in chosen]


def simulate_answer(target_attrs: dict[int, set[int]], question: Question) -> int:
    """Answer against the target item's catalog: matching aspect and value
    -> yes, matching aspect with a different value -> no, unknown aspect ->
    no answer."""
    values = target_attrs.get(question.aspect)
    if values is None:
        return NO_ANSWER
    return YES if question.value in values else NO


def target_attributes(corpus: Corpus, item: int) -> dict[int, set[int]]:
    attrs: dict[int, set[int]] = {}
    for pair in corpus.av_catalog:
        if pair.item == item:
            attrs.setdefault(pair.aspect, set()).add(pair.value)
    return attrs


def merge_answers(
    state: SessionState,
    answers: Sequence[tuple[Question, int]],
    feedback_mode: str = "both",
) -> SessionState:
    """Fold answered questions into the state's feedback and asked sets.

    ``feedback_mode`` restricts which answers feed the ranker ("positive",
    "negative", "both" or "none"); every posed question is recorded as
    asked regardless.
    """
    if feedback_mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode: {feedback_mode!r}")
    asked = set(state.asked)
    pos: list[tuple[int, int]] = []
    neg: list[tuple[int, int]] = []
    for question, answer in answers:
        key = (question.aspect, question.value)
        asked.add(key)
        if answer == YES and feedback_mode in ("both", "positive"):
            pos.append(key)
        elif answer == NO and feedback_mode in ("both", "negative"):
            neg.append(key)
        elif answer not in (YES, NO, NO_ANSWER):
            raise ValueError(f"answer must be +1, -1 or 0, got {answer!r}")
    return replace(
        state, feedback=state.feedback.merged(pos, neg), asked=frozenset(asked)
    )


def show_next_item(
    state: SessionState,
    ranker: SessionRanker,
    candidates: Iterable[int],
    relevant: frozenset[int] | set[int] | None = None,
    budget: int | None = None,
) -> tuple[SessionState, list[tuple[int, float]]]:
    """Rank the unshown candidates and show the top one.

    Returns the new state plus the full ranked remainder (the evaluation
    harness freezes it).  The session finishes when the shown item is
    relevant (evaluation mode), the iteration budget is reached, or the
    candidates are exhausted.
    """
    already = set(state.shown)
    remaining = [c for c in candidates if c not in already]
    if not remaining:
        return replace(state, finished=True), []
    ranked = ranker.rank(
        state.user, state.query_tokens, state.feedback, state.shown, remaining
    )
    top = ranked[0][0]
    shown = state.shown + (top,)
    satisfied = state.satisfied or (relevant is not None and top in relevant)
    finished = satisfied and relevant is not None
    if budget is not None and len(shown) >= budget:
        finished = True
    if len(shown) >= len(remaining) + len(state.shown):
        finished = True
    new_state = replace(state, shown=shown, satisfied=satisfied, finished=finished)
    new_state.check_invariants()
    return new_state, ranked


def start_session(
    user: int | None,
    query_tokens: Sequence[int],
    ranker: SessionRanker,
    candidates: Iterable[int],
    relevant: frozenset[int] | set[int] | None = None,
    budget: int | None = None,
) -> tuple[SessionState, list[tuple[int, float]]]:
    """Iteration 1: rank without feedback and show the top item."""
    state = SessionState(user=user, query_tokens=tuple(query_tokens))
    return show_next_item(state, ranker, candidates, relevant, budget)


def advance_session(
    state: SessionState,
    answers: Sequence[tuple[Question, int]],
    ranker: SessionRanker,
    candidates: Iterable[int],
    relevant: frozenset[int] | set[int] | None = None,
    budget: int | None = None,
    feedback_mode: str = "both",
) -> tuple[SessionState, list[tuple[int, float]]]:
    """Merge one round of answers and show the next item."""
    merged = merge_answers(state, answers, feedback_mode)
    return show_next_item(merged, ranker, candidates, relevant, budget)
