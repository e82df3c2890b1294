"""Baseline scorer: features, scoring, loss/gradient, training."""

from __future__ import annotations

import math

import numpy as np
import pytest

from sent2span.corpus import PicoType, Span
from sent2span.errors import TrainingError
from sent2span.scorer import (
    MASK_TOKEN,
    BaselineScorerModel,
    ScoreResult,
    TrainConfig,
    cross_entropy_grad,
    cross_entropy_loss,
    hashed_features,
    predict_sentence_class,
    score_masked_batch,
    score_sentence,
    train_baseline,
)

from tests._oracles import finite_difference

POP = PicoType.POPULATION


class TestScoreResult:
    def test_probability_is_softmax_of_score_pair(self):
        r = ScoreResult.from_scores(2.0, 0.0, effective_length=4)
        assert r.probability == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), abs=1e-15)

    def test_class_probabilities_sum_to_one(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            pos, neg = rng.normal(scale=10.0, size=2)
            p_pos = ScoreResult.from_scores(pos, neg, 1).probability
            p_neg = ScoreResult.from_scores(neg, pos, 1).probability
            assert abs(p_pos + p_neg - 1.0) < 1e-12

    def test_probability_strictly_inside_unit_interval(self):
        # Scores within the comfortably representable range of exp().
        for pos, neg in [(30.0, 0.0), (-30.0, 0.0), (0.0, 0.0), (15.0, -15.0)]:
            p = ScoreResult.from_scores(pos, neg, 1).probability
            assert 0.0 < p < 1.0


class TestHashedFeatures:
    def test_deterministic_given_seed(self):
        a = hashed_features(["Aspirin", "daily"], 1024, hash_seed=7)
        b = hashed_features(["Aspirin", "daily"], 1024, hash_seed=7)
        assert a == b

    def test_seed_changes_layout(self):
        a = hashed_features(["aspirin", "daily"], 1024, hash_seed=1)
        b = hashed_features(["aspirin", "daily"], 1024, hash_seed=2)
        assert a != b

    def test_case_folded(self):
        assert hashed_features(["ASPIRIN"], 1024, 0) == hashed_features(
            ["aspirin"], 1024, 0
        )

    def test_counts_unigrams_and_bigrams(self):
        feats = hashed_features(["a", "b"], 2**16, 0)
        # two unigrams plus one bigram, all distinct with high probability
        assert sum(feats.values()) == 3.0
        repeated = hashed_features(["a", "a"], 2**16, 0)
        assert sum(repeated.values()) == 3.0  # "a" twice + one bigram
        assert max(repeated.values()) == 2.0

    def test_indices_stay_in_range(self):
        feats = hashed_features([str(i) for i in range(100)], 64, 3)
        assert all(0 <= k < 64 for k in feats)


class TestMasking:
    def test_mask_replaces_tokens_before_featurizing(self):
        model = BaselineScorerModel.zeros(POP, feature_dim=2**12, hash_seed=5)
        tokens = ["elderly", "patients", "with", "pain"]
        direct = model.featurize([MASK_TOKEN, MASK_TOKEN, "with", "pain"])
        via_mask = model.featurize(tokens, Span(0, 2))
        assert direct == via_mask

    def test_masked_score_equals_premasked_score(self):
        rng = np.random.default_rng(42)
        model = BaselineScorerModel.zeros(POP, feature_dim=512, hash_seed=1)
        model.weights = rng.normal(size=model.weights.shape)
        model.bias = rng.normal(size=2)
        tokens = ["a", "b", "c", "d", "e"]
        masked = score_sentence(model, tokens, Span(1, 4))
        premasked = score_sentence(model, ["a", MASK_TOKEN, MASK_TOKEN, MASK_TOKEN, "e"])
        assert masked.positive_score == premasked.positive_score
        assert masked.negative_score == premasked.negative_score

    def test_mask_out_of_range_rejected(self):
        model = BaselineScorerModel.zeros(POP, feature_dim=64)
        with pytest.raises(ValueError):
            score_sentence(model, ["a", "b"], Span(1, 3))
        with pytest.raises(ValueError):
            score_masked_batch(model, ["a", "b"], [None, Span(0, 4)])

    def test_batch_matches_individual_scores(self):
        rng = np.random.default_rng(7)
        model = BaselineScorerModel.zeros(POP, feature_dim=512, hash_seed=2)
        model.weights = rng.normal(size=model.weights.shape)
        tokens = ["t0", "t1", "t2", "t3"]
        masks = [None, Span(0, 1), Span(1, 3), Span(0, 4)]
        batch = score_masked_batch(model, tokens, masks)
        for mask, got in zip(masks, batch):
            want = score_sentence(model, tokens, mask)
            assert got == want


def random_problem(rng, n_examples, feature_dim):
    feats = []
    for _ in range(n_examples):
        n_active = int(rng.integers(1, 6))
        f = {}
        for _ in range(n_active):
            f[int(rng.integers(feature_dim))] = float(rng.integers(1, 4))
        feats.append(f)
    labels = [int(rng.integers(2)) for _ in range(n_examples)]
    # ensure both classes show up
    labels[0], labels[-1] = 0, 1
    return feats, labels


class TestLossAndGradient:
    def test_loss_at_zero_weights_is_log_two(self):
        feats = [{0: 1.0}, {1: 2.0}]
        w = np.zeros((2, 8))
        b = np.zeros(2)
        assert cross_entropy_loss(w, b, feats, [0, 1]) == pytest.approx(math.log(2.0))

    def test_gradient_matches_central_differences(self):
        """Analytic gradient vs finite differences on random problems."""
        rng = np.random.default_rng(42)
        step = 1e-5
        for trial in range(20):
            feature_dim = int(rng.integers(8, 32))
            feats, labels = random_problem(rng, int(rng.integers(2, 7)), feature_dim)
            l2 = float(rng.choice([0.0, 0.01]))
            w = rng.normal(scale=0.5, size=(2, feature_dim))
            b = rng.normal(scale=0.5, size=2)
            grad_w, grad_b = cross_entropy_grad(w, b, feats, labels, l2)

            active = sorted({idx for f in feats for idx in f})
            coords = [(int(rng.integers(2)), idx) for idx in active[:4]] + [
                (0, int(rng.integers(feature_dim))),
                (1, int(rng.integers(feature_dim))),
            ]
            assert len(coords) >= 5
            for coord in coords:
                numeric = finite_difference(
                    lambda params: cross_entropy_loss(params, b, feats, labels, l2),
                    w,
                    coord,
                    step,
                )
                analytic = grad_w[coord]
                err = abs(analytic - numeric)
                assert err <= 1e-4 * max(abs(analytic), abs(numeric), 1.0)
            for k in (0, 1):
                numeric = finite_difference(
                    lambda params: cross_entropy_loss(w, params, feats, labels, l2),
                    b,
                    (k,),
                    step,
                )
                err = abs(grad_b[k] - numeric)
                assert err <= 1e-4 * max(abs(grad_b[k]), abs(numeric), 1.0)


class TestTraining:
    def toy_data(self):
        positive = [["aspirin", "given", "daily"], ["aspirin", "works"]]
        negative = [["placebo", "given", "daily"], ["placebo", "inert"]]
        sents = (positive + negative) * 6
        labels = ([True] * 2 + [False] * 2) * 6
        return sents, labels

    def test_learns_the_toy_problem(self):
        sents, labels = self.toy_data()
        model = train_baseline(
            sents, labels, POP, TrainConfig(epochs=30, feature_dim=2**10, seed=0)
        )
        assert predict_sentence_class(model, ["aspirin", "works"])[0] is True
        assert predict_sentence_class(model, ["placebo", "inert"])[0] is False

    def test_zero_epochs_returns_zero_model(self):
        sents, labels = self.toy_data()
        model = train_baseline(sents, labels, POP, TrainConfig(epochs=0))
        assert not model.weights.any()
        _, prob = predict_sentence_class(model, ["anything", "at", "all"])
        assert prob == 0.5

    def test_single_class_data_rejected(self):
        with pytest.raises(TrainingError, match="both classes"):
            train_baseline([["a"], ["b"]], [True, True], POP)

    def test_length_mismatch_rejected(self):
        with pytest.raises(TrainingError):
            train_baseline([["a"]], [True, False], POP)

    def test_deterministic_given_seed(self):
        sents, labels = self.toy_data()
        config = TrainConfig(epochs=5, feature_dim=2**10, seed=3)
        a = train_baseline(sents, labels, POP, config)
        b = train_baseline(sents, labels, POP, config)
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_training_reduces_loss(self):
        sents, labels = self.toy_data()
        before = train_baseline(sents, labels, POP, TrainConfig(epochs=0, feature_dim=2**10))
        after = train_baseline(sents, labels, POP, TrainConfig(epochs=10, feature_dim=2**10))
        y = [int(v) for v in labels]
        feats = [before.featurize(s) for s in sents]
        loss_before = cross_entropy_loss(before.weights, before.bias, feats, y)
        loss_after = cross_entropy_loss(after.weights, after.bias, feats, y)
        assert loss_after < loss_before

    def test_dev_selection_never_worse_than_final_epoch(self):
        rng = np.random.default_rng(42)
        vocab = [f"w{i}" for i in range(30)]
        def sample(n):
            sents, labels = [], []
            for _ in range(n):
                positive = bool(rng.integers(2))
                words = list(rng.choice(vocab, size=6))
                if positive:
                    words[int(rng.integers(6))] = "marker"
                # noisy labels so that dev loss can get worse over time
                flip = rng.random() < 0.25
                sents.append(words)
                labels.append(positive != flip)
            return sents, labels
        train_s, train_y = sample(60)
        train_y[0], train_y[1] = True, False
        dev_s, dev_y = sample(40)
        config = TrainConfig(epochs=40, learning_rate=1.0, feature_dim=2**10, seed=1)
        picked = train_baseline(train_s, train_y, POP, config, dev_s, dev_y)
        final = train_baseline(train_s, train_y, POP, config)
        dev_feats = [picked.featurize(s) for s in dev_s]
        dev_labels = [int(v) for v in dev_y]
        picked_loss = cross_entropy_loss(picked.weights, picked.bias, dev_feats, dev_labels)
        final_loss = cross_entropy_loss(final.weights, final.bias, dev_feats, dev_labels)
        assert picked_loss <= final_loss + 1e-12


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        sents = [["aspirin", "works"], ["placebo", "fails"]] * 4
        labels = [True, False] * 4
        model = train_baseline(sents, labels, POP, TrainConfig(epochs=8, feature_dim=2**10))
        path = tmp_path / "model.json"
        model.save(path)
        loaded = BaselineScorerModel.load(path)
        assert loaded.pico is POP
        assert loaded.feature_dim == model.feature_dim
        for tokens in sents:
            a = score_sentence(model, tokens)
            b = score_sentence(loaded, tokens)
            assert a == b

    def test_save_is_byte_stable(self, tmp_path):
        model = BaselineScorerModel.zeros(POP, feature_dim=64, hash_seed=9)
        model.weights[1, 3] = 1.25
        one, two = tmp_path / "a.json", tmp_path / "b.json"
        model.save(one)
        model.save(two)
        assert one.read_bytes() == two.read_bytes()
