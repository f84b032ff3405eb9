"""Build the e2e fixtures: a small synthetic corpus, a trained model, and a
manifest naming a (user, query) pair for which answering "no" to the first
round's questions provably changes the next shown item versus skipping.
"""

import json
import sys
from pathlib import Path

from convsearch.conversation import NO, select_questions, start_session, advance_session
from convsearch.corpus import SynthConfig, generate_synthetic, save_corpus, save_split
from convsearch.model import save_params
from convsearch.rankers import EmbeddingRanker


def find_divergent_pair(corpus, split, ranker, m=2):
    candidates = list(range(len(corpus.items)))
    for pair in split.test_pairs:
        state, _ = start_session(pair.user, pair.query, ranker, candidates, budget=5)
        if state.finished:
            continue
        questions = select_questions(state, corpus, m, "most_mentioned")
        if not questions:
            continue
        skip_state, _ = advance_session(state, [(q, 0) for q in questions], ranker, candidates, budget=5)
        no_state, _ = advance_session(state, [(q, NO) for q in questions], ranker, candidates, budget=5)
        if skip_state.shown[-1] != no_state.shown[-1]:
            return pair
    return None


def main(out_dir: str) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = SynthConfig(
        users=12, items=48, aspects=8, values=10, vocab=220, reviews_per_user=6, category_size=8
    )
    corpus, split = generate_synthetic(config, seed=33)
    save_corpus(corpus, out / "corpus")
    save_split(split, corpus, out / "corpus" / "split.json")
    ranker = EmbeddingRanker(dim=32, epochs=12, seed=33, subsample_rate=1e-2).fit(corpus, split)
    save_params(ranker.params_, out / "model.bin")

    pair = find_divergent_pair(corpus, split, ranker)
    if pair is None:
        print("no divergent (user, query) pair found", file=sys.stderr)
        return 1
    manifest = {
        "user": corpus.users[pair.user],
        "query": " ".join(corpus.query_words(pair.query)),
        "an_item": corpus.items[0],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    print(json.dumps(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else ".e2e"))
