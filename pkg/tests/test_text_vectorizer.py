"""
n-gram TF-IDF 特徴量化のテスト
"""
import math

import numpy as np
import pytest

from src.exceptions import VocabularyError
from src.models.params import VectorizerConfig
from src.services.text_vectorizer import (
    char_trigrams,
    fit,
    normalize_text,
    tokenize,
    transform,
    transform_batch,
    word_ngrams,
)

UNIGRAMS_ONLY = VectorizerConfig(max_unigrams=10, max_bigrams=0, max_char_trigrams=0)


class TestNormalizeAndTokenize:
    """正規化と分割"""

    def test_query_example(self):
        assert normalize_text("Artistic iPhone 6s Case!", VectorizerConfig()) == "artistic iphone 6s case"

    def test_empty(self):
        assert normalize_text("", VectorizerConfig()) == ""
        assert tokenize("") == []

    def test_punctuation_and_whitespace(self):
        assert normalize_text("  a,,b  ", VectorizerConfig()) == "a b"

    def test_lowercase_can_be_disabled(self):
        config = VectorizerConfig(lowercase=False)
        assert normalize_text("iPhone", config) == "iPhone"

    def test_custom_punctuation_set(self):
        config = VectorizerConfig(punctuation_set="-")
        assert normalize_text("a-b!c", config) == "a b!c"

    def test_tokenize_runs(self):
        assert tokenize("artistic iphone 6s case") == ["artistic", "iphone", "6s", "case"]
        assert tokenize("a  b") == ["a", "b"]


class TestNgrams:
    """単語 n-gram と文字 trigram"""

    def test_bigrams(self):
        tokens = ["artistic", "iphone", "6s", "case"]
        assert word_ngrams(tokens, 2) == ["artistic#iphone", "iphone#6s", "6s#case"]

    def test_unigram_identity(self):
        tokens = ["a", "b", "c"]
        assert word_ngrams(tokens, 1) == tokens

    def test_too_few_tokens(self):
        assert word_ngrams(["case"], 2) == []

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            word_ngrams(["a"], 0)

    def test_trigrams_case(self):
        assert char_trigrams(["case"]) == ["#ca", "cas", "ase", "se#"]

    def test_trigrams_short_word(self):
        assert char_trigrams(["6s"]) == ["#6s", "6s#"]

    def test_trigrams_iphone(self):
        assert char_trigrams(["iphone"]) == ["#ip", "iph", "pho", "hon", "one", "ne#"]

    def test_single_character_word(self):
        assert char_trigrams(["a"]) == ["#a#"]

    def test_trigram_count_matches_windowing(self):
        rng = np.random.default_rng(3)
        alphabet = list("abcdefgh")
        for _ in range(200):
            word = "".join(rng.choice(alphabet, size=int(rng.integers(1, 12))))
            padded = f"#{word}#"
            naive = [padded[i:i + 3] for i in range(len(padded) - 2)]
            grams = char_trigrams([word])
            assert grams == naive
            assert len(grams) == max(1, len(word))


class TestFit:
    """語彙構築"""

    def test_budget_and_tie_break(self):
        vocab = fit(["a b", "a c"], VectorizerConfig(max_unigrams=2, max_bigrams=0, max_char_trigrams=0))
        assert vocab.token_to_id["unigram"] == {"a": 0, "b": 1}
        np.testing.assert_array_equal(vocab.doc_freq, [2, 1])
        assert vocab.oov_id == 2
        assert vocab.dim == 3

    def test_zero_budgets_only_oov(self):
        vocab = fit(["a b"], VectorizerConfig(max_unigrams=0, max_bigrams=0, max_char_trigrams=0))
        assert vocab.dim == 1
        assert vocab.oov_id == 0

    def test_document_frequency_not_term_frequency(self):
        vocab = fit(["x x x"], UNIGRAMS_ONLY)
        assert vocab.doc_freq[vocab.token_to_id["unigram"]["x"]] == 1

    def test_empty_corpus(self):
        with pytest.raises(VocabularyError):
            fit([], VectorizerConfig())

    def test_family_order(self):
        vocab = fit(["red shoe", "red hat"], VectorizerConfig())
        ids = {family: sorted(vocab.token_to_id[family].values()) for family in ("unigram", "bigram", "trigram")}
        assert ids["unigram"] == list(range(vocab.family_size("unigram")))
        assert ids["unigram"][-1] + 1 == ids["bigram"][0]
        assert ids["bigram"][-1] + 1 == ids["trigram"][0]
        assert ids["trigram"][-1] + 1 == vocab.oov_id == vocab.dim - 1

    def test_doc_freq_within_bounds(self):
        corpus = ["red shoe", "red hat", "blue shoe lace"]
        vocab = fit(corpus, VectorizerConfig())
        assert np.all(vocab.doc_freq >= 1)
        assert np.all(vocab.doc_freq <= len(corpus))

    def test_monotone_budget(self):
        corpus = ["a b c", "a b", "a d", "e f g h"]
        small = fit(corpus, VectorizerConfig(max_unigrams=2, max_bigrams=0, max_char_trigrams=0))
        large = fit(corpus, VectorizerConfig(max_unigrams=5, max_bigrams=0, max_char_trigrams=0))
        assert set(small.token_to_id["unigram"]) <= set(large.token_to_id["unigram"])

    def test_parallel_counting_matches_serial(self):
        corpus = [f"item {i % 7} color {i % 3}" for i in range(50)]
        serial = fit(corpus, VectorizerConfig(), n_jobs=1, chunk_size=7)
        parallel = fit(corpus, VectorizerConfig(), n_jobs=2, chunk_size=7)
        assert serial.token_to_id == parallel.token_to_id
        np.testing.assert_array_equal(serial.doc_freq, parallel.doc_freq)


class TestTransform:
    """TF-IDF 変換"""

    def test_hand_computed_weights(self):
        vocab = fit(["a b", "a c"], UNIGRAMS_ONLY)
        assert vocab.idf[vocab.token_to_id["unigram"]["a"]] == pytest.approx(1.0)
        assert vocab.idf[vocab.token_to_id["unigram"]["b"]] == pytest.approx(math.log(1.5) + 1)
        vec = transform("a b", vocab)
        np.testing.assert_array_equal(vec.indices, [0, 1])
        np.testing.assert_allclose(vec.values, [0.5799, 0.8147], atol=1e-3)

    def test_empty_text(self):
        vocab = fit(["a b"], VectorizerConfig())
        assert transform("", vocab).nnz == 0

    def test_unseen_token_maps_to_oov(self):
        vocab = fit(["a b", "a c"], UNIGRAMS_ONLY)
        vec = transform("zzz", vocab)
        np.testing.assert_array_equal(vec.indices, [vocab.oov_id])
        np.testing.assert_allclose(vec.values, [1.0])

    def test_unit_norm(self):
        vocab = fit(["artistic iphone 6s case", "iphone charger", "red case"], VectorizerConfig())
        for text in ["iphone case", "unknown words here", "Case!! iPhone"]:
            vec = transform(text, vocab)
            assert vec.norm() == pytest.approx(1.0, abs=1e-9)

    def test_features_are_known_or_oov(self):
        vocab = fit(["artistic iphone 6s case", "iphone charger"], VectorizerConfig())
        vec = transform("artistic charger zzz", vocab)
        known = {i for family in vocab.token_to_id.values() for i in family.values()}
        assert set(vec.indices.tolist()) <= known | {vocab.oov_id}
        assert vocab.oov_id in vec.indices

    def test_deterministic_bytes(self):
        corpus = ["artistic iphone 6s case", "iphone charger", "red case"]
        first = transform("iphone red case", fit(corpus, VectorizerConfig()))
        second = transform("iphone red case", fit(corpus, VectorizerConfig()))
        assert first.to_bytes() == second.to_bytes()

    def test_batch_matches_single(self):
        vocab = fit(["a b", "a c", "b c d"], VectorizerConfig())
        texts = ["a b", "", "c d zzz"]
        matrix = transform_batch(texts, vocab)
        assert matrix.shape == (3, vocab.dim)
        for i, text in enumerate(texts):
            vec = transform(text, vocab)
            np.testing.assert_array_equal(matrix[i].indices, vec.indices)
            np.testing.assert_allclose(matrix[i].data, vec.values)

