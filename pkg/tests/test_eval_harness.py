"""
評価ハーネスと BM25 ベースラインのテスト
"""
import math

import numpy as np
import pytest

from src.exceptions import VocabularyError
from src.models.sparse import SparseVector
from src.models.xmc_model import Prediction
from src.services.beam_inference import beam_search, exact_predict
from src.services.bm25 import bm25_build, bm25_topk
from src.services.eval_harness import (
    beam_sweep,
    bench_latency,
    cold_start_stats,
    evaluate,
    prune_sweep,
    recall_at_k,
    weights_nbytes,
)
from src.services.synthetic import random_model


def _prediction(ids) -> Prediction:
    ids = np.asarray(ids, dtype=np.int64)
    return Prediction(ids, np.linspace(1.0, 0.1, len(ids)))


def _score(index, query: str, doc_id: int) -> float:
    return float(index.scores(query)[0][doc_id])


def _random_query(rng: np.random.Generator, dim: int, nnz: int = 30) -> SparseVector:
    indices = np.sort(rng.choice(dim, size=nnz, replace=False)).astype(np.int32)
    values = rng.random(nnz) + 0.1
    return SparseVector(dim, indices, values / np.linalg.norm(values))


class TestRecall:
    """Recall@k"""

    def test_half_recall(self):
        assert recall_at_k(_prediction([1, 3]), {1, 2}, 2) == 0.5

    def test_full_recall(self):
        assert recall_at_k(_prediction([5, 2, 1, 9]), {1, 2}, 3) == 1.0

    def test_disjoint(self):
        assert recall_at_k(_prediction([7, 8]), {1, 2}, 2) == 0.0

    def test_only_top_k_counts(self):
        assert recall_at_k([7, 1, 2], {1, 2}, 1) == 0.0

    def test_empty_truth(self):
        with pytest.raises(ValueError):
            recall_at_k([1], set(), 10)

    def test_set_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            predicted = rng.permutation(50)[: int(rng.integers(0, 30))]
            truth = set(rng.choice(50, size=int(rng.integers(1, 10)), replace=False).tolist())
            k = int(rng.integers(1, 40))
            expected = len(set(predicted[:k].tolist()) & truth) / len(truth)
            assert recall_at_k(predicted, truth, k) == pytest.approx(expected)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(42)
        predictions = [_prediction(rng.permutation(200)[:120]) for _ in range(30)]
        truths = [set(rng.choice(200, size=5, replace=False).tolist()) for _ in range(30)]
        summary = evaluate(predictions, truths)
        assert summary.recall_at[10] <= summary.recall_at[50] <= summary.recall_at[100]


class TestEvaluate:
    """マクロ平均"""

    def test_macro_average(self):
        summary = evaluate([_prediction([1]), _prediction([5])], [{1}, {1, 2}], ks=(1,))
        assert summary.recall_at[1] == pytest.approx(0.5)
        assert summary.n_queries == 2

    def test_empty_truth_excluded_and_counted(self):
        summary = evaluate([_prediction([1]), _prediction([2])], [{1}, set()], ks=(1,))
        assert summary.recall_at[1] == 1.0
        assert summary.n_queries == 1
        assert summary.n_excluded == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([_prediction([1])], [{1}, {2}])

    def test_cold_start_counts(self):
        stats = cold_start_stats([0, 1], [[0, 2], [3]])
        assert stats.n_test_labels == 3
        assert stats.n_unseen_labels == 2
        assert stats.n_test_pairs == 3
        assert stats.n_unseen_pairs == 2


class TestBm25:
    """Okapi-BM25"""

    def test_single_document_idf(self):
        index = bm25_build(["red"])
        assert index.idf["red"] == pytest.approx(math.log(4 / 3))

    def test_defaults(self):
        index = bm25_build(["red shoe"])
        assert index.k1 == 0.5
        assert index.b == 0.45

    def test_absent_token_contributes_nothing(self):
        index = bm25_build(["red shoe", "blue hat"])
        for doc_id in range(2):
            assert _score(index, "red zzz", doc_id) == _score(index, "red", doc_id)

    def test_identical_documents(self):
        prediction = bm25_topk("red shoe", bm25_build(["red shoe", "red shoe", "blue hat"]), 3)
        np.testing.assert_array_equal(prediction.label_ids, [0, 1])
        assert prediction.scores[0] == prediction.scores[1]

    def test_higher_tf_scores_higher(self):
        index = bm25_build(["red", "red red", "red red red"], b=0.0)
        prediction = bm25_topk("red", index, 3)
        np.testing.assert_array_equal(prediction.label_ids, [2, 1, 0])
        assert np.all(np.diff(prediction.scores) < 0)

    def test_no_matching_tokens(self):
        prediction = bm25_topk("zzz", bm25_build(["red shoe"]), 10)
        assert len(prediction) == 0

    def test_topk_agrees_with_single_document_score(self):
        documents = ["red shoe lace", "blue shoe", "red hat", "green scarf wool"]
        index = bm25_build(documents)
        prediction = bm25_topk("red shoe", index, 4)
        for doc_id, score in zip(prediction.label_ids, prediction.scores):
            assert score == pytest.approx(_score(index, "red shoe", int(doc_id)))

    def test_repeated_query_tokens_accumulate(self):
        index = bm25_build(["red shoe", "blue hat"])
        assert _score(index, "red red", 0) == pytest.approx(2 * _score(index, "red", 0))

    def test_insertion_order_invariance(self):
        documents = ["red shoe lace", "blue shoe", "red hat", "green scarf wool"]
        perm = [2, 0, 3, 1]
        index = bm25_build(documents)
        shuffled = bm25_build([documents[i] for i in perm])
        for position, doc_id in enumerate(perm):
            assert _score(shuffled, "red shoe wool", position) == pytest.approx(_score(index, "red shoe wool", doc_id))

    def test_postings_sorted(self):
        index = bm25_build(["b a", "a", "c a"])
        docs, tfs = index.postings["a"]
        np.testing.assert_array_equal(docs, [0, 1, 2])
        np.testing.assert_array_equal(tfs, [1, 1, 1])

    def test_ties_break_by_document_id(self):
        prediction = bm25_topk("red", bm25_build(["blue", "red", "red"]), 1)
        np.testing.assert_array_equal(prediction.label_ids, [1])

    def test_empty_corpus(self):
        with pytest.raises(VocabularyError):
            bm25_build([])
        with pytest.raises(VocabularyError):
            bm25_build(["", "!!"])


class TestBenchLatency:
    """レイテンシ計測"""

    def test_requires_enough_queries(self):
        with pytest.raises(ValueError):
            bench_latency(lambda q: q, list(range(99)))

    def test_repetitions_count_toward_minimum(self):
        stats = bench_latency(lambda q: sum(range(200)), list(range(50)), warmup=0, repetitions=2)
        assert stats.n_measured == 100

    def test_throughput_consistent_with_median(self):
        stats = bench_latency(lambda q: sum(range(2000)), list(range(150)))
        assert stats.throughput_qps == pytest.approx(1000.0 / stats.median_ms, rel=0.1)
        assert stats.p99_ms >= stats.median_ms

    def test_narrow_beam_is_faster(self):
        rng = np.random.default_rng(42)
        model = random_model(20_000, branching_factor=32, max_leaf=100, dim=5000, nnz_per_column=10, seed=0)
        queries = [_random_query(rng, 5000) for _ in range(120)]
        narrow = bench_latency(lambda q: beam_search(q, model, 1, 10), queries)
        wide = bench_latency(lambda q: beam_search(q, model, 50, 10), queries)
        assert narrow.median_ms < wide.median_ms


class TestSweeps:
    """ビーム幅・枝刈りの掃引"""

    @pytest.fixture
    def workload(self):
        rng = np.random.default_rng(42)
        model = random_model(300, branching_factor=4, max_leaf=20, dim=200, nnz_per_column=20, seed=0)
        queries = [_random_query(rng, 200) for _ in range(40)]
        truths = [set(exact_predict(q, model, k=5).label_ids.tolist()) for q in queries]
        return model, queries, truths

    def test_beam_sweep_rows(self, workload):
        model, queries, truths = workload
        rows = beam_sweep(model, queries, truths, beams=[1, 5, 300], k=100, warmup=2)
        assert [r.beam for r in rows] == [1, 5, 300]
        assert all(r.latency.n_measured == len(queries) for r in rows)
        # 全幅ビームは厳密解と一致する
        assert rows[-1].recall_at[100] == pytest.approx(1.0)

    def test_prune_sweep_monotone_size(self, workload):
        model, queries, truths = workload
        rows = prune_sweep(model, queries, truths, epsilons=[0.4, 0.1, 0.3, 0.2], beam=5, k=100)
        assert [r.epsilon for r in rows] == [0.1, 0.2, 0.3, 0.4]
        assert all(a.nnz >= b.nnz for a, b in zip(rows, rows[1:]))
        assert all(a.size_bytes >= b.size_bytes for a, b in zip(rows, rows[1:]))
        # 元の重みは変更されない
        assert weights_nbytes(model.weights) >= rows[0].size_bytes
