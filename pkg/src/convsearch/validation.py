"""Input validation helpers shared by the estimator facade."""

from __future__ import annotations

from typing import Sequence

from sklearn.exceptions import NotFittedError


def check_fitted(estimator, attributes: Sequence[str]) -> None:
    """Raise NotFittedError unless every fitted attribute is present."""
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet (missing {', '.join(missing)}); "
            "call fit() first"
        )


def check_ids(name: str, ids: Sequence[int], upper: int) -> None:
    for idx in ids:
        if not 0 <= idx < upper:
            raise ValueError(f"{name} id {idx} out of range [0, {upper})")


def check_query_tokens(tokens: Sequence[int], vocab_size: int) -> None:
    if len(tokens) == 0:
        raise ValueError("query must contain at least one token")
    check_ids("query token", tokens, vocab_size)
