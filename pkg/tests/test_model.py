import hashlib
import math

import numpy as np
import pytest

from convsearch.model import (
    CorpusSizes,
    FeedbackSet,
    ModelConfig,
    ModelError,
    embed_aspect,
    init_params,
    load_params,
    log_sigmoid,
    prob_aspect,
    prob_value,
    project_query,
    rank_items,
    save_params,
    score_item_feedback,
    score_item_initial,
    score_items_feedback,
    sigmoid,
)

SIZES = CorpusSizes(n_words=9, n_users=3, n_items=10, n_aspect_words=6, n_values=4)
ASPECT_TOKENS = [(0,), (1, 2), (3,), (4, 5)]


def make_params(config=None, seed=0, scale=1.0):
    params = init_params(config or ModelConfig(dim=4), SIZES, seed=seed)
    if scale != 1.0:
        for table in params.tables().values():
            table *= scale
    return params


def zero_params(config=None):
    params = make_params(config)
    for table in params.tables().values():
        table[...] = 0.0
    return params


class TestProjectQuery:
    def test_zero_projection_gives_zero(self):
        params = zero_params()
        params.word_emb[...] = 1.0
        assert np.allclose(project_query([0, 1], params), 0.0)

    def test_one_dimensional_hand_value(self):
        config = ModelConfig(dim=1)
        params = init_params(config, SIZES, seed=0)
        params.word_emb[0, 0] = 0.5
        params.word_emb[1, 0] = 1.5
        params.query_proj_W[...] = 1.0
        params.query_proj_b[...] = 0.0
        # independent oracle: plain math.tanh of the token mean
        assert project_query([0, 1], params)[0] == pytest.approx(math.tanh(1.0), abs=1e-12)
        assert project_query([0, 1], params)[0] == pytest.approx(0.761594, abs=1e-6)

    def test_token_permutation_invariant(self):
        params = make_params(seed=3)
        a = project_query([0, 4, 7], params)
        b = project_query([7, 0, 4], params)
        assert np.allclose(a, b)

    def test_empty_tokens_error(self):
        with pytest.raises(ModelError):
            project_query([], make_params())


class TestEmbedAspect:
    def test_zero_projection(self):
        params = zero_params()
        params.aspect_word_emb[...] = 2.0
        assert np.allclose(embed_aspect([0, 1], params), 0.0)

    def test_identity_projection_single_token(self):
        params = zero_params()
        x = np.array([0.3, -0.7, 0.1, 0.9])
        params.aspect_word_emb[2] = x
        params.aspect_proj_W[...] = np.eye(4)
        assert np.allclose(embed_aspect([2], params), np.tanh(x))

    def test_shared_projection_matches_query_path(self):
        config = ModelConfig(dim=4, share_query_aspect_projection=True)
        params = init_params(config, SIZES, seed=1)
        params.aspect_word_emb[:4] = params.word_emb[:4]
        assert np.allclose(embed_aspect([1, 3], params), project_query([1, 3], params))


class TestScoring:
    def test_zero_item_embedding(self):
        params = make_params(seed=2)
        params.item_emb[5] = 0.0
        q0 = project_query([0], params)
        assert score_item_initial(1, q0, 5, params) == 0.0

    def test_query_weight_one_ignores_user(self):
        config = ModelConfig(dim=4, query_weight=1.0)
        params = init_params(config, SIZES, seed=4)
        q0 = project_query([2, 3], params)
        scores = [score_item_initial(u, q0, 7, params) for u in range(3)]
        assert scores[0] == pytest.approx(scores[1]) == pytest.approx(scores[2])
        assert scores[0] == pytest.approx(float(params.item_emb[7] @ q0))

    def test_two_dimensional_hand_value(self):
        config = ModelConfig(dim=2, query_weight=0.5)
        params = init_params(config, CorpusSizes(4, 2, 3, 2, 2), seed=0)
        params.item_emb[1] = [1.0, 2.0]
        params.user_emb[0] = [0.0, 1.0]
        q0 = np.array([1.0, 0.0])
        assert score_item_initial(0, q0, 1, params) == pytest.approx(1.5, abs=1e-12)


class TestProbabilities:
    def test_sigmoid_at_zero(self):
        params = zero_params()
        assert prob_aspect(np.zeros(4), 0, params) == pytest.approx(0.5)
        assert prob_value(0, "positive", np.zeros(4), 0, params) == pytest.approx(0.5)

    def test_hand_sigmoid_value(self):
        params = zero_params()
        params.item_emb[3] = [1.0, 0.0, 0.0, 0.0]
        a = np.array([2.0, 0.0, 0.0, 0.0])
        # oracle: logistic function evaluated directly
        expected = 1.0 / (1.0 + math.exp(-2.0))
        assert prob_aspect(a, 3, params) == pytest.approx(expected, abs=1e-12)
        assert prob_aspect(a, 3, params) == pytest.approx(0.880797, abs=1e-6)

    def test_aspect_negation_symmetry(self):
        params = make_params(seed=5, scale=6.0)
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.normal(size=4)
            item = int(rng.integers(SIZES.n_items))
            assert prob_aspect(-a, item, params) == pytest.approx(
                1.0 - prob_aspect(a, item, params), abs=1e-12
            )

    def test_value_one_dimensional_hand(self):
        config = ModelConfig(dim=1)
        params = init_params(config, SIZES, seed=0)
        params.value_pos_emb[2, 0] = 2.0
        params.item_emb[1, 0] = 0.5
        assert prob_value(2, "positive", np.array([0.5]), 1, params) == pytest.approx(
            1.0 / (1.0 + math.exp(-2.0)), abs=1e-12
        )

    @pytest.mark.parametrize(
        "config",
        [
            ModelConfig(dim=4, separate_negative_table=False),
            ModelConfig(dim=4, use_negative_values=False, separate_negative_table=False),
            ModelConfig(dim=4, use_negative_values=False),
        ],
        ids=["shared-table", "no-negative-feedback", "no-neg-values-own-flag"],
    )
    def test_complement_identity_without_separate_table(self, config):
        params = init_params(config, SIZES, seed=6)
        for table in params.tables().values():
            table *= 10.0
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = rng.normal(size=4) * 3
            item = int(rng.integers(SIZES.n_items))
            value = int(rng.integers(SIZES.n_values))
            p_pos = prob_value(value, "positive", a, item, params)
            p_neg = prob_value(value, "negative", a, item, params)
            assert p_pos + p_neg == 1.0  # exact in floating point

    def test_probabilities_strictly_inside_unit_interval(self):
        params = make_params(seed=7, scale=50.0)
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.normal(size=4) * 20
            item = int(rng.integers(SIZES.n_items))
            value = int(rng.integers(SIZES.n_values))
            for p in (
                prob_aspect(a, item, params),
                prob_value(value, "positive", a, item, params),
                prob_value(value, "negative", a, item, params),
            ):
                assert 0.0 < p < 1.0


class TestFeedbackScore:
    def test_empty_feedback_reduces_to_initial(self):
        params = make_params(seed=8)
        q0 = project_query([1, 2], params)
        fb = FeedbackSet()
        for item in range(SIZES.n_items):
            assert score_item_feedback(0, q0, fb, item, ASPECT_TOKENS, params) == pytest.approx(
                score_item_initial(0, q0, item, params), abs=1e-12
            )

    def test_feedback_terms_never_raise_score(self):
        params = make_params(seed=9, scale=4.0)
        q0 = project_query([0], params)
        base = score_item_feedback(1, q0, FeedbackSet(), 3, ASPECT_TOKENS, params)
        for aspect in range(len(ASPECT_TOKENS)):
            for value in range(SIZES.n_values):
                fb_pos = FeedbackSet(positive=frozenset({(aspect, value)}))
                fb_neg = FeedbackSet(negative=frozenset({(aspect, value)}))
                assert score_item_feedback(1, q0, fb_pos, 3, ASPECT_TOKENS, params) <= base
                assert score_item_feedback(1, q0, fb_neg, 3, ASPECT_TOKENS, params) <= base

    def test_single_pair_all_zero_adds_log_quarter(self):
        params = zero_params()
        q0 = np.zeros(4)
        fb = FeedbackSet(positive=frozenset({(0, 1)}))
        score = score_item_feedback(0, q0, fb, 2, ASPECT_TOKENS, params)
        assert score == pytest.approx(math.log(0.25), abs=1e-12)

    def test_disjointness_enforced(self):
        with pytest.raises(ModelError):
            FeedbackSet(positive=frozenset({(0, 1)}), negative=frozenset({(0, 1)}))


class TestRankItems:
    def test_tie_breaks_by_item_id(self):
        params = zero_params()
        ranked = rank_items(0, [0], FeedbackSet(), range(SIZES.n_items), ASPECT_TOKENS, params)
        assert [item for item, _ in ranked] == list(range(SIZES.n_items))

    def test_empty_feedback_matches_initial_order(self):
        rng = np.random.default_rng(3)
        for seed in range(100):
            params = make_params(seed=seed, scale=3.0)
            tokens = rng.integers(0, SIZES.n_words, size=3).tolist()
            user = int(rng.integers(SIZES.n_users))
            ranked = rank_items(
                user, tokens, FeedbackSet(), range(SIZES.n_items), ASPECT_TOKENS, params
            )
            q0 = project_query(tokens, params)
            scores = np.array(
                [score_item_initial(user, q0, i, params) for i in range(SIZES.n_items)]
            )
            expected = sorted(range(SIZES.n_items), key=lambda i: (-scores[i], i))
            assert [item for item, _ in ranked] == expected

    def test_matches_bruteforce_per_item_scoring(self):
        params = make_params(seed=11, scale=5.0)
        fb = FeedbackSet(positive=frozenset({(1, 2)}), negative=frozenset({(0, 3), (2, 0)}))
        tokens = [4, 2]
        ranked = rank_items(2, tokens, fb, range(SIZES.n_items), ASPECT_TOKENS, params)
        q0 = project_query(tokens, params)

        def brute(item):
            # independent oracle built from the closed-form probabilities
            total = float(params.item_emb[item] @ (0.5 * q0 + 0.5 * params.user_emb[2]))
            for aspect, value in sorted(fb.positive):
                a = embed_aspect(ASPECT_TOKENS[aspect], params)
                total += math.log(
                    prob_value(value, "positive", a, item, params) * prob_aspect(a, item, params)
                )
            for aspect, value in sorted(fb.negative):
                a = embed_aspect(ASPECT_TOKENS[aspect], params)
                total += math.log(
                    prob_value(value, "negative", a, item, params) * prob_aspect(a, item, params)
                )
            return total

        brute_scores = {item: brute(item) for item in range(SIZES.n_items)}
        expected = sorted(brute_scores, key=lambda i: (-brute_scores[i], i))
        assert [item for item, _ in ranked] == expected
        for item, score in ranked:
            assert score == pytest.approx(brute_scores[item], abs=1e-9)

    def test_constant_score_shift_keeps_order(self):
        params = make_params(seed=12, scale=2.0)
        fb = FeedbackSet(positive=frozenset({(3, 1)}))
        tokens = [1, 5]
        ranked = rank_items(1, tokens, fb, range(SIZES.n_items), ASPECT_TOKENS, params)
        q0 = project_query(tokens, params)
        ids = np.arange(SIZES.n_items)
        scores = score_items_feedback(1, q0, fb, ids, ASPECT_TOKENS, params) + 123.456
        shifted = sorted(range(SIZES.n_items), key=lambda i: (-scores[i], i))
        assert [item for item, _ in ranked] == shifted

    def test_non_finite_parameters_error(self):
        params = make_params()
        params.item_emb[0, 0] = np.nan
        with pytest.raises(ModelError):
            rank_items(0, [0], FeedbackSet(), range(3), ASPECT_TOKENS, params)


class TestAblationConfigs:
    def test_hem_config_ignores_feedback(self):
        config = ModelConfig(dim=4).hem()
        params = init_params(config, SIZES, seed=13)
        fb = FeedbackSet(positive=frozenset({(0, 1)}), negative=frozenset({(2, 3)}))
        a = rank_items(0, [1], fb, range(SIZES.n_items), ASPECT_TOKENS, params)
        b = rank_items(0, [1], FeedbackSet(), range(SIZES.n_items), ASPECT_TOKENS, params)
        assert a == b

    def test_invalid_configs_rejected(self):
        with pytest.raises(ModelError):
            ModelConfig(dim=0)
        with pytest.raises(ModelError):
            ModelConfig(query_weight=1.5)


class TestParamsIO:
    def test_init_bounds_and_determinism(self):
        config = ModelConfig(dim=16)
        a = init_params(config, SIZES, seed=21)
        b = init_params(config, SIZES, seed=21)
        for name, table in a.tables().items():
            assert np.array_equal(table, b.tables()[name])
            assert np.all(np.abs(table) <= 0.5 / 16 + 1e-15)

    def _checksum(self, path):
        return hashlib.sha256(path.read_bytes()).hexdigest()

    @pytest.mark.parametrize(
        "config",
        [
            ModelConfig(dim=3),
            ModelConfig(dim=3, separate_negative_table=False),
            ModelConfig(dim=3, share_query_aspect_projection=True),
        ],
        ids=["full", "no-neg-table", "shared-projection"],
    )
    def test_save_load_round_trip(self, config, tmp_path):
        params = init_params(config, SIZES, seed=17)
        path = tmp_path / "model.bin"
        save_params(params, path)
        first = self._checksum(path)
        loaded = load_params(path)
        assert loaded.config == params.config
        for name, table in params.tables().items():
            assert np.array_equal(table, loaded.tables()[name])
        save_params(loaded, path)
        assert self._checksum(path) == first

    def test_vocab_size_mismatch_rejected(self, tmp_path):
        params = init_params(ModelConfig(dim=3), SIZES, seed=1)
        path = tmp_path / "model.bin"
        save_params(params, path)
        wrong = CorpusSizes(n_words=8, n_users=3, n_items=10, n_aspect_words=6, n_values=4)
        with pytest.raises(ModelError, match="sizes"):
            load_params(path, expected_sizes=wrong)

    def test_truncated_file_rejected(self, tmp_path):
        params = init_params(ModelConfig(dim=3), SIZES, seed=1)
        path = tmp_path / "model.bin"
        save_params(params, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ModelError):
            load_params(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"\x00" * 200)
        with pytest.raises(ModelError, match="magic"):
            load_params(path)


class TestNumericHelpers:
    def test_log_sigmoid_no_underflow(self):
        assert np.isfinite(log_sigmoid(-800.0))
        assert log_sigmoid(-800.0) == pytest.approx(-800.0)
        assert log_sigmoid(800.0) == pytest.approx(0.0, abs=1e-300)

    def test_sigmoid_symmetry(self):
        xs = np.linspace(-30, 30, 101)
        assert np.allclose(sigmoid(xs) + sigmoid(-xs), 1.0, atol=1e-12)
