"""Command-line entry point for the full experiment lifecycle.

Every subcommand echoes its resolved configuration (defaults < config file
< flags) as a JSON banner before running, so a run can be reproduced from
its log plus input files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from convsearch import corpus as corpus_mod
from convsearch.corpus import (
    Corpus,
    SynthConfig,
    generate_synthetic,
    load_corpus,
    load_split,
    save_corpus,
    save_split,
    split_train_test,
)
from convsearch.evaluation import emit_report, evaluate_conversational, simulated_feedback
from convsearch.model import CorpusSizes, ModelConfig, init_params, load_params, save_params
from convsearch.rankers import BASELINE_RANKERS, EmbeddingRanker
from convsearch.training import finite_difference_check, random_check_instance

ABLATION_PRESETS = {
    "full": {},
    "no-aspect-net": {"use_aspect_net": False},
    "no-value-net": {"use_value_net": False},
    "no-negative-feedback": {"use_negative_values": False, "separate_negative_table": False},
    "shared-value-table": {"separate_negative_table": False},
    "av-off": {"use_aspect_net": False, "use_value_net": False},
}


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge precedence: defaults < --config file < explicit flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        file_values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise SystemExit(f"config file sets unknown keys: {sorted(unknown)}")
        resolved.update(file_values)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _banner(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True))


def _load_corpus_split(corpus_dir: str, split_path: str) -> tuple[Corpus, object]:
    corpus = load_corpus(corpus_dir)
    split = load_split(split_path, corpus)
    return corpus, split


def _embedding_ranker(resolved: dict) -> EmbeddingRanker:
    preset = dict(ABLATION_PRESETS[resolved["ablation"]])
    return EmbeddingRanker(
        dim=resolved["dim"],
        query_weight=resolved["query_weight"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        lr0=resolved["lr0"],
        grad_clip_global_norm=resolved["grad_clip"],
        beta=resolved["beta"],
        l2_gamma=resolved["l2_gamma"],
        subsample_rate=resolved["subsample_rate"],
        nonrel_items_per_conv=resolved["nonrel_items"],
        seed=resolved["seed"],
        **preset,
    )


# --- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    defaults = {
        "seed": 0,
        "users": 50,
        "items": 200,
        "aspects": 20,
        "values": 30,
        "vocab": 500,
        "reviews_per_user": 10,
        "out": None,
    }
    resolved = _resolve(args, defaults)
    if not resolved["out"]:
        raise SystemExit("--out directory is required")
    _banner("synth", resolved)
    config = SynthConfig(
        users=resolved["users"],
        items=resolved["items"],
        aspects=resolved["aspects"],
        values=resolved["values"],
        vocab=resolved["vocab"],
        reviews_per_user=resolved["reviews_per_user"],
    )
    corpus, split = generate_synthetic(config, seed=resolved["seed"])
    out = Path(resolved["out"])
    save_corpus(corpus, out)
    save_split(split, corpus, out / "split.json")
    print(f"wrote corpus ({len(corpus.reviews)} reviews, {len(corpus.items)} items) to {out}")
    return 0


def cmd_ingest(args) -> int:
    defaults = {"reviews": None, "metadata": None, "av": None, "format": "canonical", "out": None}
    resolved = _resolve(args, defaults)
    if not resolved["reviews"] or not resolved["out"]:
        raise SystemExit("--reviews and --out are required")
    _banner("ingest", resolved)
    corpus = Corpus()
    if resolved["metadata"]:
        corpus_mod.register_items(resolved["metadata"], corpus, format=resolved["format"])
    corpus_mod.ingest_reviews(resolved["reviews"], format=resolved["format"], corpus=corpus)
    if resolved["av"]:
        skipped = corpus_mod.ingest_aspect_values(resolved["av"], corpus)
        if skipped:
            print(f"skipped {skipped} catalog rows", file=sys.stderr)
    if resolved["metadata"]:
        corpus_mod.ingest_item_metadata(resolved["metadata"], corpus, format=resolved["format"])
    if corpus.dropped_empty_reviews:
        print(f"dropped {corpus.dropped_empty_reviews} empty reviews", file=sys.stderr)
    save_corpus(corpus, resolved["out"])
    print(
        f"ingested {len(corpus.reviews)} reviews, {len(corpus.users)} users, "
        f"{len(corpus.items)} items, {len(corpus.av_catalog)} catalog rows -> {resolved['out']}"
    )
    return 0


def cmd_split(args) -> int:
    defaults = {"corpus": None, "seed": 0, "review_frac": 0.7, "query_test_frac": 0.3, "out": None}
    resolved = _resolve(args, defaults)
    if not resolved["corpus"] or not resolved["out"]:
        raise SystemExit("--corpus and --out are required")
    _banner("split", resolved)
    corpus = load_corpus(resolved["corpus"])
    split = split_train_test(
        corpus,
        seed=resolved["seed"],
        review_frac=resolved["review_frac"],
        query_test_frac=resolved["query_test_frac"],
    )
    save_split(split, corpus, resolved["out"])
    print(
        f"split: {len(split.train_reviews)} train / {len(split.test_reviews)} test reviews, "
        f"{len(split.test_pairs)} test pairs -> {resolved['out']}"
    )
    return 0


TRAIN_DEFAULTS = {
    "corpus": None,
    "split": None,
    "out": None,
    "trace": None,
    "ablation": "full",
    "dim": 100,
    "query_weight": 0.5,
    "epochs": 20,
    "batch_size": 64,
    "lr0": 0.5,
    "grad_clip": 5.0,
    "beta": 5,
    "l2_gamma": 0.0,
    "subsample_rate": 1e-5,
    "nonrel_items": 2,
    "seed": 13,
}


def cmd_train(args) -> int:
    resolved = _resolve(args, TRAIN_DEFAULTS)
    for key in ("corpus", "split", "out"):
        if not resolved[key]:
            raise SystemExit(f"--{key} is required")
    _banner("train", resolved)
    corpus, split = _load_corpus_split(resolved["corpus"], resolved["split"])
    ranker = _embedding_ranker(resolved).fit(corpus, split)
    save_params(ranker.params_, resolved["out"])
    if resolved["trace"]:
        with Path(resolved["trace"]).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            for epoch, loss in enumerate(ranker.loss_trace_, start=1):
                writer.writerow([epoch, f"{loss:.6f}"])
    first = ranker.loss_trace_[0] if ranker.loss_trace_ else float("nan")
    last = ranker.loss_trace_[-1] if ranker.loss_trace_ else float("nan")
    print(f"trained {resolved['epochs']} epochs; mean loss {first:.4f} -> {last:.4f} -> {resolved['out']}")
    return 0


EVAL_DEFAULTS = {
    "corpus": None,
    "split": None,
    "model": None,
    "iterations": 5,
    "m": 2,
    "strategy": "most_mentioned",
    "feedback_mode": "both",
    "seed": 0,
    "format": "csv",
    "out": None,
}


def cmd_eval(args) -> int:
    resolved = _resolve(args, EVAL_DEFAULTS)
    for key in ("corpus", "split", "model", "out"):
        if not resolved[key]:
            raise SystemExit(f"--{key} is required")
    _banner("eval", resolved)
    corpus, split = _load_corpus_split(resolved["corpus"], resolved["split"])
    params = load_params(resolved["model"], expected_sizes=CorpusSizes.of(corpus))
    ranker = EmbeddingRanker.from_params(params, corpus)
    report = evaluate_conversational(
        ranker,
        simulated_feedback(corpus),
        split,
        corpus,
        iterations=resolved["iterations"],
        m=resolved["m"],
        strategy=resolved["strategy"],
        feedback_mode=resolved["feedback_mode"],
        seed=resolved["seed"],
    )
    emit_report(report, resolved["out"], format=resolved["format"])
    for it in report.iterations:
        print(
            f"iteration {it.iteration}: map {it.means['map']:.4f} mrr {it.means['mrr']:.4f} "
            f"ndcg {it.means['ndcg']:.4f} coverage {it.coverage:.2f} active {it.active_queries}"
        )
    return 0


BASELINE_DEFAULTS = {
    "corpus": None,
    "split": None,
    "baseline": None,
    "iterations": 5,
    "m": 2,
    "strategy": "most_mentioned",
    "seed": 0,
    "k1": 1.2,
    "b": 0.75,
    "mu": 1500.0,
    "neg_weight": 0.2,
    "neg_doc_weight": 0.1,
    "top_n": 20,
    "mix_weight": 0.5,
    "em_iters": 10,
    "format": "csv",
    "out": None,
}


def cmd_baseline_eval(args) -> int:
    resolved = _resolve(args, BASELINE_DEFAULTS)
    for key in ("corpus", "split", "baseline", "out"):
        if not resolved[key]:
            raise SystemExit(f"--{key} is required")
    if resolved["baseline"] not in BASELINE_RANKERS:
        raise SystemExit(f"unknown baseline {resolved['baseline']!r}; choose from {sorted(BASELINE_RANKERS)}")
    _banner("baseline-eval", resolved)
    corpus, split = _load_corpus_split(resolved["corpus"], resolved["split"])
    name = resolved["baseline"]
    if name == "bm25":
        ranker = BASELINE_RANKERS[name](k1=resolved["k1"], b=resolved["b"])
    elif name == "ql":
        ranker = BASELINE_RANKERS[name](mu=resolved["mu"])
    elif name == "rocchio":
        ranker = BASELINE_RANKERS[name](k1=resolved["k1"], b=resolved["b"], neg_weight=resolved["neg_weight"])
    else:
        ranker = BASELINE_RANKERS[name](
            mu=resolved["mu"],
            neg_doc_weight=resolved["neg_doc_weight"],
            top_n=resolved["top_n"],
            mix_weight=resolved["mix_weight"],
            em_iters=resolved["em_iters"],
        )
    ranker.fit(corpus, split)
    report = evaluate_conversational(
        ranker,
        simulated_feedback(corpus),
        split,
        corpus,
        iterations=resolved["iterations"],
        m=resolved["m"],
        strategy=resolved["strategy"],
        seed=resolved["seed"],
    )
    emit_report(report, resolved["out"], format=resolved["format"])
    for it in report.iterations:
        print(
            f"iteration {it.iteration}: map {it.means['map']:.4f} mrr {it.means['mrr']:.4f} "
            f"ndcg {it.means['ndcg']:.4f}"
        )
    return 0


def cmd_check_grad(args) -> int:
    defaults = {"trials": 100, "dim": 8, "eps": 1e-4, "beta": 2, "gamma": 0.001, "seed": 0, "threshold": 1e-3}
    resolved = _resolve(args, defaults)
    _banner("check-grad", resolved)
    sizes = CorpusSizes(n_words=12, n_users=4, n_items=7, n_aspect_words=8, n_values=5)
    worst_overall = 0.0
    for name, preset in ABLATION_PRESETS.items():
        if name == "av-off":
            continue  # no aspect/value terms to exercise beyond the others
        config = ModelConfig(dim=resolved["dim"], **preset)
        rng = np.random.default_rng(resolved["seed"])
        worst = 0.0
        for trial in range(resolved["trials"]):
            params = init_params(config, sizes, seed=trial)
            for table in params.tables().values():
                table *= 8.0
            instance = random_check_instance(rng, sizes, beta=resolved["beta"])
            err = finite_difference_check(params, instance, eps=resolved["eps"], gamma=resolved["gamma"])
            worst = max(worst, err)
        print(f"{name}: max relative error {worst:.3e} over {resolved['trials']} instances")
        worst_overall = max(worst_overall, worst)
    print(f"overall max relative error {worst_overall:.3e}")
    if worst_overall >= resolved["threshold"]:
        print(f"FAIL: exceeds threshold {resolved['threshold']}", file=sys.stderr)
        return 1
    return 0


SWEEP_DEFAULTS = {
    "corpus": None,
    "split": None,
    "out": None,
    "dims": "100",
    "iterations_grid": "1,2,3,4,5",
    "m_grid": "1,2,3",
    "epochs": 20,
    "lr0": 0.5,
    "subsample_rate": 1e-5,
    "feedback_mode": "both",
    "seed": 13,
}


def cmd_sweep(args) -> int:
    resolved = _resolve(args, SWEEP_DEFAULTS)
    for key in ("corpus", "split", "out"):
        if not resolved[key]:
            raise SystemExit(f"--{key} is required")
    _banner("sweep", resolved)
    corpus, split = _load_corpus_split(resolved["corpus"], resolved["split"])
    dims = [int(x) for x in str(resolved["dims"]).split(",") if x]
    iteration_grid = sorted(int(x) for x in str(resolved["iterations_grid"]).split(",") if x)
    m_grid = [int(x) for x in str(resolved["m_grid"]).split(",") if x]
    max_iterations = max(iteration_grid)
    rows = []
    for dim in dims:
        ranker = EmbeddingRanker(
            dim=dim,
            epochs=resolved["epochs"],
            lr0=resolved["lr0"],
            subsample_rate=resolved["subsample_rate"],
            seed=resolved["seed"],
        ).fit(corpus, split)
        for m in m_grid:
            report = evaluate_conversational(
                ranker,
                simulated_feedback(corpus),
                split,
                corpus,
                iterations=max_iterations,
                m=m,
                feedback_mode=resolved["feedback_mode"],
                seed=resolved["seed"],
            )
            for k in iteration_grid:
                it = report.iterations[k - 1]
                for metric, mean in it.means.items():
                    rows.append(
                        {
                            "dim": dim,
                            "m": m,
                            "iteration": k,
                            "metric": metric,
                            "mean": mean,
                            "coverage": it.coverage,
                            "active_queries": it.active_queries,
                        }
                    )
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["dim", "m", "iteration", "metric", "mean", "coverage", "active_queries"]
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows -> {out}")
    return 0


def cmd_serve(args) -> int:
    defaults = {
        "corpus": None,
        "model": None,
        "m": 2,
        "iterations": 5,
        "strategy": "most_mentioned",
        "port": 8444,
        "host": "127.0.0.1",
        "anonymous": True,
        "session_ttl": 3600.0,
    }
    resolved = _resolve(args, defaults)
    for key in ("corpus", "model"):
        if not resolved[key]:
            raise SystemExit(f"--{key} is required")
    _banner("serve", resolved)
    import uvicorn

    from convsearch.service import create_app

    corpus = load_corpus(resolved["corpus"])
    params = load_params(resolved["model"], expected_sizes=CorpusSizes.of(corpus))
    ranker = EmbeddingRanker.from_params(params, corpus)
    app = create_app(
        ranker,
        corpus,
        m=resolved["m"],
        iterations=resolved["iterations"],
        strategy=resolved["strategy"],
        anonymous=resolved["anonymous"],
        session_ttl=resolved["session_ttl"],
    )
    uvicorn.run(app, host=resolved["host"], port=resolved["port"], log_level="warning")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convsearch",
        description="Conversational product search: data, training, evaluation, serving.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, flags):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with defaults for this subcommand")
        for flag, kwargs in flags.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=func)
        return p

    add(
        "synth",
        cmd_synth,
        {
            "--seed": {"type": int},
            "--users": {"type": int},
            "--items": {"type": int},
            "--aspects": {"type": int},
            "--values": {"type": int},
            "--vocab": {"type": int},
            "--reviews-per-user": {"type": int, "dest": "reviews_per_user"},
            "--out": {},
        },
    )
    add(
        "ingest",
        cmd_ingest,
        {
            "--reviews": {},
            "--metadata": {},
            "--av": {},
            "--format": {"choices": ["canonical", "amazon"]},
            "--out": {},
        },
    )
    add(
        "split",
        cmd_split,
        {
            "--corpus": {},
            "--seed": {"type": int},
            "--review-frac": {"type": float, "dest": "review_frac"},
            "--query-test-frac": {"type": float, "dest": "query_test_frac"},
            "--out": {},
        },
    )
    add(
        "train",
        cmd_train,
        {
            "--corpus": {},
            "--split": {},
            "--out": {},
            "--trace": {},
            "--ablation": {"choices": sorted(ABLATION_PRESETS)},
            "--dim": {"type": int},
            "--query-weight": {"type": float, "dest": "query_weight"},
            "--epochs": {"type": int},
            "--batch-size": {"type": int, "dest": "batch_size"},
            "--lr0": {"type": float},
            "--grad-clip": {"type": float, "dest": "grad_clip"},
            "--beta": {"type": int},
            "--l2-gamma": {"type": float, "dest": "l2_gamma"},
            "--subsample-rate": {"type": float, "dest": "subsample_rate"},
            "--nonrel-items": {"type": int, "dest": "nonrel_items"},
            "--seed": {"type": int},
        },
    )
    add(
        "eval",
        cmd_eval,
        {
            "--corpus": {},
            "--split": {},
            "--model": {},
            "--iterations": {"type": int},
            "--m": {"type": int},
            "--strategy": {"choices": ["most_mentioned", "random"]},
            "--feedback-mode": {
                "choices": ["both", "positive", "negative", "none"],
                "dest": "feedback_mode",
            },
            "--seed": {"type": int},
            "--format": {"choices": ["csv", "json"]},
            "--out": {},
        },
    )
    add(
        "baseline-eval",
        cmd_baseline_eval,
        {
            "--corpus": {},
            "--split": {},
            "--baseline": {"choices": sorted(BASELINE_RANKERS)},
            "--iterations": {"type": int},
            "--m": {"type": int},
            "--strategy": {"choices": ["most_mentioned", "random"]},
            "--seed": {"type": int},
            "--k1": {"type": float},
            "--b": {"type": float},
            "--mu": {"type": float},
            "--neg-weight": {"type": float, "dest": "neg_weight"},
            "--neg-doc-weight": {"type": float, "dest": "neg_doc_weight"},
            "--top-n": {"type": int, "dest": "top_n"},
            "--mix-weight": {"type": float, "dest": "mix_weight"},
            "--em-iters": {"type": int, "dest": "em_iters"},
            "--format": {"choices": ["csv", "json"]},
            "--out": {},
        },
    )
    add(
        "check-grad",
        cmd_check_grad,
        {
            "--trials": {"type": int},
            "--dim": {"type": int},
            "--eps": {"type": float},
            "--beta": {"type": int},
            "--gamma": {"type": float},
            "--seed": {"type": int},
            "--threshold": {"type": float},
        },
    )
    add(
        "sweep",
        cmd_sweep,
        {
            "--corpus": {},
            "--split": {},
            "--out": {},
            "--dims": {},
            "--iterations-grid": {"dest": "iterations_grid"},
            "--m-grid": {"dest": "m_grid"},
            "--epochs": {"type": int},
            "--lr0": {"type": float},
            "--subsample-rate": {"type": float, "dest": "subsample_rate"},
            "--feedback-mode": {
                "choices": ["both", "positive", "negative", "none"],
                "dest": "feedback_mode",
            },
            "--seed": {"type": int},
        },
    )
    add(
        "serve",
        cmd_serve,
        {
            "--corpus": {},
            "--model": {},
            "--m": {"type": int},
            "--iterations": {"type": int},
            "--strategy": {"choices": ["most_mentioned", "random"]},
            "--port": {"type": int},
            "--host": {},
            "--anonymous": {"action": argparse.BooleanOptionalAction, "default": None},
            "--session-ttl": {"type": float, "dest": "session_ttl"},
        },
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
