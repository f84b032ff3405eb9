"""Conversational product search with aspect-value feedback.

Subpackages cover the full experiment lifecycle: corpus ingestion and
synthetic generation, the embedding ranking model and its trainer,
term-based baselines, the conversation state machine with a simulated
user, the freezing-rank evaluation harness, an HTTP session service,
and a command-line entry point.
"""

from convsearch.corpus import (
    AspectValuePair,
    Corpus,
    Review,
    Split,
    SynthConfig,
    Vocab,
    generate_synthetic,
    ingest_aspect_values,
    ingest_reviews,
    load_corpus,
    save_corpus,
    split_train_test,
)
from convsearch.model import FeedbackSet, ModelConfig, ModelParams, init_params, load_params, save_params
from convsearch.training import TrainConfig, train

__all__ = [
    "AspectValuePair",
    "Corpus",
    "FeedbackSet",
    "ModelConfig",
    "ModelParams",
    "Review",
    "Split",
    "SynthConfig",
    "TrainConfig",
    "Vocab",
    "generate_synthetic",
    "ingest_aspect_values",
    "ingest_reviews",
    "init_params",
    "load_corpus",
    "load_params",
    "save_corpus",
    "save_params",
    "split_train_test",
    "train",
]

__version__ = "0.1.0"
