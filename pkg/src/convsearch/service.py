"""HTTP session API for live conversational search over a trained model.

One in-memory session per conversation: POST /sessions starts it (first
item plus questions), POST /sessions/{id}/answers advances it, GET
endpoints expose read-only snapshots.  Model parameters are shared
read-only across sessions; each session's operations serialize on a
per-session lock, and answers referencing questions that are no longer
pending are rejected with 409.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from convsearch.conversation import (
    NO,
    NO_ANSWER,
    YES,
    Question,
    SessionState,
    advance_session,
    select_questions,
    start_session,
)
from convsearch.corpus import Corpus, tokenize
from convsearch.rankers import EmbeddingRanker

ANSWER_VALUES = {"yes": YES, "no": NO, "skip": NO_ANSWER}


# --- wire schemas ----------------------------------------------------------


class StartSessionRequest(BaseModel):
    user_id: str = Field(default="", description="known user name; empty for anonymous")
    query: str


class AnswerItem(BaseModel):
    aspect: str
    value: str
    answer: str  # yes | no | skip


class AnswersRequest(BaseModel):
    answers: list[AnswerItem]


class AvPairOut(BaseModel):
    aspect: str
    value: str
    mentions: int


class ItemOut(BaseModel):
    item_id: str
    title: str
    av_pairs: list[AvPairOut]


class QuestionOut(BaseModel):
    aspect: str
    value: str
    text: str


class SessionRoundOut(BaseModel):
    session_id: str
    iteration: int
    shown_item: ItemOut
    questions: list[QuestionOut]
    personalization: bool
    finished: bool


class FeedbackOut(BaseModel):
    positive: list[AvPairOut]
    negative: list[AvPairOut]


class SessionStateOut(BaseModel):
    session_id: str
    user_id: str
    query: str
    iteration: int
    shown_items: list[ItemOut]
    pending_questions: list[QuestionOut]
    feedback: FeedbackOut
    personalization: bool
    finished: bool


@dataclass
class SessionRecord:
    session_id: str
    user_id: str
    state: SessionState
    pending: list[Question]
    personalization: bool
    created: float
    updated: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory store with TTL eviction; no persistence by design."""

    def __init__(self, ttl_seconds: float = 3600.0) -> None:
        self.ttl = ttl_seconds
        self._records: dict[str, SessionRecord] = {}
        self._lock = threading.Lock()

    def _sweep(self, now: float) -> None:
        dead = [sid for sid, rec in self._records.items() if now - rec.updated > self.ttl]
        for sid in dead:
            del self._records[sid]

    def create(self, record: SessionRecord) -> None:
        with self._lock:
            self._sweep(time.monotonic())
            self._records[record.session_id] = record

    def get(self, session_id: str) -> SessionRecord:
        with self._lock:
            self._sweep(time.monotonic())
            record = self._records.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return record


def create_app(
    ranker: EmbeddingRanker,
    corpus: Corpus,
    m: int = 2,
    iterations: int = 5,
    strategy: str = "most_mentioned",
    anonymous: bool = True,
    session_ttl: float = 3600.0,
) -> FastAPI:
    app = FastAPI(title="conversational product search", version="0.1.0")
    store = SessionStore(ttl_seconds=session_ttl)
    catalog_by_item = corpus.catalog_by_item()
    candidates = list(range(len(corpus.items)))

    def item_payload(item: int) -> ItemOut:
        pairs = sorted(catalog_by_item.get(item, []), key=lambda p: (-p.mentions, p.aspect, p.value))
        return ItemOut(
            item_id=corpus.items[item],
            title=f"Item {corpus.items[item]}",
            av_pairs=[
                AvPairOut(
                    aspect=corpus.aspect_words(p.aspect),
                    value=corpus.value_vocab.entries[p.value],
                    mentions=p.mentions,
                )
                for p in pairs
            ],
        )

    def question_payload(question: Question) -> QuestionOut:
        return QuestionOut(
            aspect=corpus.aspect_words(question.aspect),
            value=corpus.value_vocab.entries[question.value],
            text=question.text,
        )

    def resolve_question(record: SessionRecord, item: AnswerItem) -> Question:
        for question in record.pending:
            if (
                corpus.aspect_words(question.aspect) == item.aspect
                and corpus.value_vocab.entries[question.value] == item.value
            ):
                return question
        raise HTTPException(status_code=409, detail=f"question not pending: {item.aspect} / {item.value}")

    def round_payload(record: SessionRecord) -> SessionRoundOut:
        return SessionRoundOut(
            session_id=record.session_id,
            iteration=record.state.iteration,
            shown_item=item_payload(record.state.shown[-1]),
            questions=[question_payload(q) for q in record.pending],
            personalization=record.personalization,
            finished=record.state.finished,
        )

    def select_pending(state: SessionState) -> list[Question]:
        if state.finished:
            return []
        return select_questions(state, corpus, m, strategy)

    @app.post("/sessions", response_model=SessionRoundOut, status_code=201)
    def create_session(request: StartSessionRequest) -> SessionRoundOut:
        tokens = [
            corpus.review_vocab.id_of[t]
            for t in tokenize(request.query)
            if t in corpus.review_vocab.id_of
        ]
        if not tokens:
            raise HTTPException(status_code=400, detail="query is empty or out of vocabulary")
        user: int | None
        if request.user_id:
            if request.user_id not in corpus.user_index:
                if not anonymous:
                    raise HTTPException(status_code=404, detail="unknown user")
                user = None
            else:
                user = corpus.user_index[request.user_id]
        else:
            if not anonymous:
                raise HTTPException(status_code=404, detail="anonymous sessions disabled")
            user = None
        state, _ = start_session(user, tokens, ranker, candidates, budget=iterations)
        record = SessionRecord(
            session_id=uuid.uuid4().hex,
            user_id=request.user_id,
            state=state,
            pending=select_pending(state),
            personalization=user is not None,
            created=time.monotonic(),
            updated=time.monotonic(),
        )
        store.create(record)
        return round_payload(record)

    @app.post("/sessions/{session_id}/answers", response_model=SessionRoundOut)
    def post_answers(session_id: str, request: AnswersRequest) -> SessionRoundOut:
        record = store.get(session_id)
        with record.lock:
            if record.state.finished:
                raise HTTPException(status_code=410, detail="session finished")
            answers: list[tuple[Question, int]] = []
            seen: set[tuple[int, int]] = set()
            for item in request.answers:
                if item.answer not in ANSWER_VALUES:
                    raise HTTPException(status_code=422, detail=f"bad answer {item.answer!r}")
                question = resolve_question(record, item)
                key = (question.aspect, question.value)
                if key in seen:
                    raise HTTPException(status_code=409, detail="duplicate answer")
                seen.add(key)
                answers.append((question, ANSWER_VALUES[item.answer]))
            # unanswered pending questions count as skipped
            for question in record.pending:
                if (question.aspect, question.value) not in seen:
                    answers.append((question, NO_ANSWER))
            state, _ = advance_session(
                record.state, answers, ranker, candidates, budget=iterations
            )
            record.state = state
            record.pending = select_pending(state)
            record.updated = time.monotonic()
            return round_payload(record)

    @app.get("/sessions/{session_id}", response_model=SessionStateOut)
    def get_session(session_id: str) -> SessionStateOut:
        record = store.get(session_id)
        with record.lock:
            state = record.state

            def fb_payload(pairs) -> list[AvPairOut]:
                return [
                    AvPairOut(
                        aspect=corpus.aspect_words(a),
                        value=corpus.value_vocab.entries[v],
                        mentions=0,
                    )
                    for a, v in sorted(pairs)
                ]

            return SessionStateOut(
                session_id=record.session_id,
                user_id=record.user_id,
                query=" ".join(corpus.review_vocab.words(state.query_tokens)),
                iteration=state.iteration,
                shown_items=[item_payload(i) for i in state.shown],
                pending_questions=[question_payload(q) for q in record.pending],
                feedback=FeedbackOut(
                    positive=fb_payload(state.feedback.positive),
                    negative=fb_payload(state.feedback.negative),
                ),
                personalization=record.personalization,
                finished=state.finished,
            )

    @app.get("/items/{item_id}", response_model=ItemOut)
    def get_item(item_id: str) -> ItemOut:
        if item_id not in corpus.item_index:
            raise HTTPException(status_code=404, detail="unknown item")
        return item_payload(corpus.item_index[item_id])

    return app
