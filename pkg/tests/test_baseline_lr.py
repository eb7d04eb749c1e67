"""Stemmer, featurizer, LR training, and explanation tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanmax.baseline_lr import (
    BaselineError,
    LrModel,
    explain_lr,
    featurize,
    load_lr,
    predict_lr,
    save_lr,
    stem,
    train_lr,
    _word_stems,
)
from spanmax.corpus import Corpus, SynthConfig, generate_synthetic, make_post


class TestStem:
    @pytest.mark.parametrize(
        "token,expected",
        [
            ("idiots", "idiot"),
            ("followers", "follower"),
            ("is", "is"),        # guarded: stem would be too short
            ("classes", "class"),
            ("hates", "hate"),
            ("running", "runn"),
            ("walked", "walk"),
            ("slowly", "slow"),
            ("boss", "boss"),    # trailing "ss" kept
            ("doing", "doing"),  # guarded
            ("zorg", "zorg"),
        ],
    )
    def test_rules(self, token, expected):
        assert stem(token) == expected

    @given(st.text(alphabet="abcdefgs", max_size=12))
    def test_deterministic_and_idempotent_on_short(self, token):
        assert stem(token) == stem(token)


class TestFeaturize:
    def test_uni_and_bigrams(self):
        assert featurize("you idiot") == {"you": 1, "idiot": 1, "you_idiot": 1}

    def test_empty(self):
        assert featurize("") == {}

    def test_repeated(self):
        assert featurize("a a") == {"a": 2, "a_a": 1}

    def test_stemmed_before_counting(self):
        feats = featurize("idiots idiot")
        assert feats == {"idiot": 2, "idiot_idiot": 1}

    def test_punctuation_dropped(self):
        feats = featurize("you, idiot!")
        assert feats == {"you": 1, "idiot": 1, "you_idiot": 1}


def separable_corpus(size=200, seed=0):
    return generate_synthetic(
        SynthConfig(size=size, frac_toxic=0.5, frac_context_toxic=0.0,
                    frac_context_benign=0.0, min_words=4, max_words=8),
        seed=seed,
    )


class TestTrainLr:
    def test_separable_accuracy(self):
        corpus = separable_corpus()
        model = train_lr(corpus, l2_strength=0.001, epochs=300)
        accuracy = np.mean(
            [int(predict_lr(model, p.text) >= 0.5) == p.label for p in corpus]
        )
        assert accuracy >= 0.95

    def test_l2_sweep_shrinks_weights(self):
        corpus = separable_corpus()
        norms = [
            float(np.linalg.norm(train_lr(corpus, l2_strength=l2, epochs=300).weights))
            for l2 in (0.001, 0.1, 10.0)
        ]
        assert norms[0] > norms[1] > norms[2]

    def test_one_class_corpus_bias_dominates(self):
        posts = tuple(make_post(f"p{i}", f"word{i} and stuff", 0.9) for i in range(20))
        model = train_lr(Corpus(posts=posts), l2_strength=0.5, epochs=300)
        assert model.bias > 0
        assert float(np.max(np.abs(model.weights))) < 0.2

    def test_empty_corpus(self):
        with pytest.raises(BaselineError):
            train_lr(Corpus(posts=()), l2_strength=0.1)

    def test_deterministic(self):
        corpus = separable_corpus(size=60)
        a = train_lr(corpus, l2_strength=0.01, epochs=100)
        b = train_lr(corpus, l2_strength=0.01, epochs=100)
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


class TestPredictLr:
    def test_zero_model_gives_half(self):
        model = LrModel(feature_ids={"x": 0}, weights=np.zeros(1), bias=0.0, l2_strength=0.0)
        assert predict_lr(model, "anything at all") == 0.5

    def test_single_feature_arithmetic(self):
        model = LrModel(feature_ids={"zorg": 0}, weights=np.array([2.0]), bias=-1.0,
                        l2_strength=0.0)
        # z = 2*1 - 1 = 1 -> sigmoid(1)
        assert predict_lr(model, "zorg") == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_unseen_features_fall_back_to_bias(self):
        model = LrModel(feature_ids={"zorg": 0}, weights=np.array([2.0]), bias=-1.0,
                        l2_strength=0.0)
        assert predict_lr(model, "martian words") == pytest.approx(
            1.0 / (1.0 + np.e), abs=1e-12
        )

    def test_monotone_in_positive_feature_count(self):
        model = LrModel(feature_ids={"zorg": 0}, weights=np.array([0.7]), bias=0.0,
                        l2_strength=0.0)
        probs = [predict_lr(model, " ".join(["zorg"] * k)) for k in (1, 2, 3)]
        assert probs[0] < probs[1] < probs[2]


def explain_model(weights: dict[str, float], bias=0.0):
    ids = {f: i for i, f in enumerate(sorted(weights))}
    w = np.zeros(len(ids))
    for f, v in weights.items():
        w[ids[f]] = v
    return LrModel(feature_ids=ids, weights=w, bias=bias, l2_strength=0.0)


class TestExplainLr:
    def test_sign_rule(self):
        model = explain_model({"idiot": 2.0, "you": -0.1})
        result = explain_lr(model, "you idiot")
        assert result.char_set == frozenset(range(4, 9))

    def test_all_non_positive_empty(self):
        model = explain_model({"idiot": -2.0, "you": -0.1})
        assert explain_lr(model, "you idiot").char_set == frozenset()

    def test_bigram_marks_both_words(self):
        model = explain_model({"brown_man": 1.5})
        result = explain_lr(model, "a brown man walked")
        assert result.char_set == frozenset(range(2, 7)) | frozenset(range(8, 11))

    def test_word_contributions_sum_features(self):
        model = explain_model({"idiot": 2.0, "you_idiot": 0.5, "you": -0.1})
        result = explain_lr(model, "you idiot")
        contributions = {w.word: w.contribution for w in result.words}
        assert contributions["you"] == pytest.approx(-0.1 + 0.5)
        assert contributions["idiot"] == pytest.approx(2.0 + 0.5)

    def brute_force_char_set(self, model, text):
        """Mark chars of occurrences backing any strictly positive feature."""
        words = _word_stems(text)
        counts = featurize(text)
        marked = set()
        for i, (w, start, end) in enumerate(words):
            feats = [w]
            if i > 0:
                feats.append(f"{words[i - 1][0]}_{w}")
            if i + 1 < len(words):
                feats.append(f"{w}_{words[i + 1][0]}")
            for f in feats:
                if model.weight_of(f) * counts.get(f, 0) > 0:
                    marked.update(range(start, end))
        return frozenset(marked)

    @settings(max_examples=120)
    @given(st.lists(st.sampled_from(["zorg", "tea", "you", "idiot", "ok"]),
                    min_size=1, max_size=8),
           st.integers(0, 2**31 - 1))
    def test_matches_brute_force(self, words_list, seed):
        rng = np.random.default_rng(seed)
        vocab_feats = ["zorg", "tea", "you", "idiot", "ok",
                       "zorg_tea", "you_idiot", "tea_you", "idiot_ok", "ok_zorg"]
        weights = {f: float(rng.standard_normal()) for f in vocab_feats}
        model = explain_model(weights)
        text = " ".join(words_list)
        assert explain_lr(model, text).char_set == self.brute_force_char_set(model, text)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        corpus = separable_corpus(size=60)
        model = train_lr(corpus, l2_strength=0.05, epochs=120)
        path = tmp_path / "lr.tsv"
        save_lr(model, path)
        loaded = load_lr(path)
        assert loaded.feature_ids == model.feature_ids
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.l2_strength == model.l2_strength
        sample = corpus[0].text
        assert predict_lr(loaded, sample) == predict_lr(model, sample)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("zorg\t0.5\n")
        with pytest.raises(BaselineError, match="header"):
            load_lr(path)
