"""
評価ハーネス
Recall@k、レイテンシ計測、ビーム幅・枝刈り閾値のトレードオフ計測を行う
"""
import logging
import time
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from src.models.evaluation import (
    BeamSweepRow,
    ColdStartStats,
    LatencyStats,
    PruneSweepRow,
    RecallSummary,
)
from src.models.xmc_model import LayeredWeights, Model, Prediction
from src.services.beam_inference import batch_predict, beam_search
from src.services.hier_trainer import prune

logger = logging.getLogger(__name__)

DEFAULT_KS = (10, 50, 100)
MIN_MEASURED_QUERIES = 100


def recall_at_k(
    predicted: Union[Prediction, Sequence[int]],
    truth: Iterable[int],
    k: int
) -> float:
    """
    |top_k(predicted) ∩ truth| / |truth|

    Raises:
        ValueError: 正解集合が空の場合
    """
    truth_set = {int(t) for t in truth}
    if not truth_set:
        raise ValueError("正解ラベル集合が空です")
    ids = predicted.label_ids if isinstance(predicted, Prediction) else predicted
    top = {int(i) for i in list(ids)[:k]}
    return len(top & truth_set) / len(truth_set)


def evaluate(
    predictions: Sequence[Prediction],
    truths: Sequence[Iterable[int]],
    ks: Sequence[int] = DEFAULT_KS
) -> RecallSummary:
    """
    クエリごとの Recall@k をマクロ平均する (正解が空のクエリは除外して数える)
    """
    if len(predictions) != len(truths):
        raise ValueError(f"予測数 {len(predictions)} と正解数 {len(truths)} が一致しません")
    totals = {k: 0.0 for k in ks}
    n_queries = 0
    n_excluded = 0
    for prediction, truth in zip(predictions, truths):
        truth = set(truth)
        if not truth:
            n_excluded += 1
            continue
        n_queries += 1
        for k in ks:
            totals[k] += recall_at_k(prediction, truth, k)

    if n_excluded:
        logger.warning(f"正解ラベルが空のクエリを除外しました: {n_excluded}件")
    recall_at = {k: (totals[k] / n_queries if n_queries else 0.0) for k in ks}
    return RecallSummary(recall_at=recall_at, n_queries=n_queries, n_excluded=n_excluded)


def cold_start_stats(train_labels: Iterable[int], truths: Sequence[Iterable[int]]) -> ColdStartStats:
    """テスト正解のうち学習時に正例がなかったラベルを数える"""
    seen = set(int(l) for l in train_labels)
    test_labels: set[int] = set()
    stats = ColdStartStats()
    for truth in truths:
        for label in truth:
            label = int(label)
            test_labels.add(label)
            stats.n_test_pairs += 1
            if label not in seen:
                stats.n_unseen_pairs += 1
    stats.n_test_labels = len(test_labels)
    stats.n_unseen_labels = len(test_labels - seen)
    return stats


def _timed_run(predict_fn: Callable, queries: Sequence) -> tuple[np.ndarray, list]:
    """1クエリずつ実行して経過時間 (ms) と出力を返す"""
    latencies = np.empty(len(queries), dtype=np.float64)
    outputs = []
    for i, query in enumerate(queries):
        start = time.perf_counter()
        outputs.append(predict_fn(query))
        latencies[i] = (time.perf_counter() - start) * 1000.0
    return latencies, outputs


def _summarize(latencies: np.ndarray) -> LatencyStats:
    median = float(np.median(latencies))
    return LatencyStats(
        median_ms=median,
        p99_ms=float(np.percentile(latencies, 99)),
        throughput_qps=1000.0 / median if median > 0 else float("inf"),
        n_measured=len(latencies),
    )


def bench_latency(
    predict_fn: Callable,
    queries: Sequence,
    warmup: int = 10,
    repetitions: int = 1
) -> LatencyStats:
    """
    単一スレッドでのクエリ単位レイテンシを計測する

    Args:
        predict_fn: 生テキスト (または特徴ベクトル) を受け取る推論関数 (特徴量化を含めて計測)
        queries: 計測クエリ
        warmup: 計測前に捨てるクエリ数
        repetitions: クエリ列の繰り返し回数

    Returns:
        LatencyStats: 中央値・p99 (ms) とスループット (1000 / 中央値)
    """
    queries = list(queries)
    if len(queries) * repetitions < MIN_MEASURED_QUERIES:
        raise ValueError(f"計測クエリ数は {MIN_MEASURED_QUERIES} 件以上必要です")
    for query in queries[:warmup]:
        predict_fn(query)
    runs = [_timed_run(predict_fn, queries)[0] for _ in range(repetitions)]
    stats = _summarize(np.concatenate(runs))
    logger.info(
        f"レイテンシ計測: 中央値 {stats.median_ms:.3f} ms, p99 {stats.p99_ms:.3f} ms, "
        f"スループット {stats.throughput_qps:.1f} q/s"
    )
    return stats


def beam_sweep(
    model: Model,
    queries: Sequence,
    truths: Sequence[Iterable[int]],
    beams: Sequence[int],
    k: int = 100,
    ks: Sequence[int] = DEFAULT_KS,
    warmup: int = 10
) -> list[BeamSweepRow]:
    """ビーム幅ごとに Recall と単一スレッドのレイテンシを計測する"""
    queries = list(queries)
    rows = []
    for beam in beams:
        def predict(query, beam=beam):
            return beam_search(query, model, beam, k)

        for query in queries[:warmup]:
            predict(query)
        latencies, predictions = _timed_run(predict, queries)
        summary = evaluate(predictions, truths, ks)
        row = BeamSweepRow(beam=int(beam), recall_at=summary.recall_at, latency=_summarize(latencies))
        logger.info(
            f"ビーム幅 {beam}: Recall@{max(ks)} {summary.recall_at[max(ks)]:.4f}, "
            f"中央値 {row.latency.median_ms:.3f} ms"
        )
        rows.append(row)
    return rows


def weights_nbytes(weights: LayeredWeights) -> int:
    """CSC 配列 (data, indices, indptr) の合計バイト数"""
    return int(sum(w.data.nbytes + w.indices.nbytes + w.indptr.nbytes for w in weights.matrices))


def prune_sweep(
    model: Model,
    queries: Sequence,
    truths: Sequence[Iterable[int]],
    epsilons: Sequence[float],
    beam: Optional[int] = None,
    k: int = 100,
    ks: Sequence[int] = DEFAULT_KS,
    n_jobs: int = 1,
    measure_latency: bool = False
) -> list[PruneSweepRow]:
    """
    枝刈り閾値ごとの nnz・モデルサイズ・Recall を計測する

    各 ε は元の重みに対して適用する (prune は ε について単調)
    """
    queries = list(queries)
    rows = []
    for epsilon in sorted(epsilons):
        pruned = Model(
            weights=prune(model.weights, epsilon),
            chain=model.chain,
            activation=model.activation,
            default_beam=model.default_beam,
            vocabulary=model.vocabulary,
            label_ids=model.label_ids,
        )
        predictions = batch_predict(queries, pruned, beam, k, n_jobs=n_jobs)
        summary = evaluate(predictions, truths, ks)
        latency = None
        if measure_latency:
            latency = bench_latency(lambda q: beam_search(q, pruned, beam, k), queries)
        row = PruneSweepRow(
            epsilon=float(epsilon),
            recall_at=summary.recall_at,
            nnz=pruned.weights.nnz(),
            size_bytes=weights_nbytes(pruned.weights),
            latency=latency,
        )
        logger.info(
            f"ε={epsilon}: nnz {row.nnz}, サイズ {row.size_bytes} bytes, "
            f"Recall@{max(ks)} {summary.recall_at[max(ks)]:.4f}"
        )
        rows.append(row)
    return rows
