"""
ビームサーチ推論サービス
ラベル木を層ごとに辿り、祖先スコアの積で上位 k ラベルを返す
"""
import logging
from typing import Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from src.models.params import Activation
from src.models.sparse import SparseVector
from src.models.xmc_model import Model, Prediction
from src.services.text_vectorizer import transform
from src.utils.kernels import gather_row_dots

logger = logging.getLogger(__name__)

Query = Union[str, SparseVector]


def activate(v, activation: Activation = Activation.L3_HINGE):
    """
    マージンを [0, 1] のスコアに変換する

    sigmoid: 1 / (1 + exp(-v))
    l3-hinge: 1 - min(1, max(0, 1 - v))^3
    """
    v = np.asarray(v, dtype=np.float64)
    if Activation(activation) == Activation.SIGMOID:
        out = 0.5 * (1.0 + np.tanh(0.5 * v))
    else:
        out = 1.0 - np.clip(1.0 - v, 0.0, 1.0) ** 3
    return out if out.ndim else float(out)


def _log_activate(v: np.ndarray, activation: Activation) -> np.ndarray:
    """活性化の対数 (積を対数空間で累積するため)"""
    if activation == Activation.SIGMOID:
        return -np.logaddexp(0.0, -v)
    with np.errstate(divide="ignore"):
        return np.log(1.0 - np.clip(1.0 - v, 0.0, 1.0) ** 3)


def _scatter(x: SparseVector, dim: int) -> np.ndarray:
    if x.dim != dim:
        raise ValueError(f"クエリ次元 {x.dim} とモデル次元 {dim} が一致しません")
    dense = np.zeros(dim, dtype=np.float64)
    dense[x.indices] = x.values
    return dense


def _top_by_score(ids: np.ndarray, log_scores: np.ndarray, size: int) -> np.ndarray:
    """スコア降順・同率は ID 昇順で上位 size 件の位置"""
    order = np.lexsort((ids, -log_scores))
    return order[:size]


def _margins(model: Model, layer: int, rows: np.ndarray, x_dense: np.ndarray) -> np.ndarray:
    wt = model.row_major[layer - 1]
    return gather_row_dots(wt.indptr, wt.indices, wt.data, rows, x_dense)


def _vectorize(query: Query, model: Model) -> SparseVector:
    if isinstance(query, SparseVector):
        return query
    if model.vocabulary is None:
        raise ValueError("語彙のないモデルにはテキストクエリを渡せません")
    return transform(query, model.vocabulary)


def beam_search(
    x: Query,
    model: Model,
    beam: Optional[int] = None,
    k: int = 10,
    activation: Optional[Activation] = None
) -> Prediction:
    """
    ビームサーチで上位 k ラベルを取得する

    Args:
        x: クエリ (テキストまたは疎ベクトル)
        model: 学習済みモデル
        beam: ビーム幅 b (省略時はモデル既定値)
        k: 出力ラベル数
        activation: 活性化関数の上書き (再学習不要)

    Returns:
        Prediction: スコア降順のラベル
    """
    beam = beam if beam is not None else model.default_beam
    if beam < 1 or k < 1:
        raise ValueError("ビーム幅と k は 1 以上である必要があります")
    activation = Activation(activation or model.activation)
    vec = _vectorize(x, model)
    x_dense = _scatter(vec, model.weights.dim)

    # 根から開始
    beam_nodes = np.zeros(1, dtype=np.int64)
    beam_scores = np.zeros(1, dtype=np.float64)
    evaluations = 0
    for t in range(1, model.depth + 1):
        child_indptr, child_indices = model.chain.children[t - 1]
        spans = [child_indices[child_indptr[p]:child_indptr[p + 1]] for p in beam_nodes]
        counts = np.fromiter((len(s) for s in spans), dtype=np.int64, count=len(spans))
        candidates = np.concatenate(spans).astype(np.int64)
        parent_scores = np.repeat(beam_scores, counts)
        margins = _margins(model, t, candidates, x_dense)
        evaluations += len(candidates)
        scores = parent_scores + _log_activate(margins, activation)

        size = k if t == model.depth else beam
        keep = _top_by_score(candidates, scores, size)
        beam_nodes = candidates[keep]
        beam_scores = scores[keep]

    return Prediction(
        label_ids=beam_nodes,
        scores=np.exp(beam_scores),
        evaluations=evaluations,
    )


def exact_predict(
    x: Query,
    model: Model,
    k: int = 10,
    activation: Optional[Activation] = None
) -> Prediction:
    """全ノードを評価して厳密な上位 k ラベルを返す (ビームサーチの検証用)"""
    activation = Activation(activation or model.activation)
    vec = _vectorize(x, model)
    x_dense = _scatter(vec, model.weights.dim)

    scores = np.zeros(1, dtype=np.float64)
    evaluations = 0
    for t in range(1, model.depth + 1):
        nodes = np.arange(model.chain.width(t), dtype=np.int64)
        margins = _margins(model, t, nodes, x_dense)
        evaluations += len(nodes)
        scores = scores[model.chain.parents[t - 1]] + _log_activate(margins, activation)

    labels = np.arange(model.n_labels, dtype=np.int64)
    keep = _top_by_score(labels, scores, k)
    return Prediction(labels[keep], np.exp(scores[keep]), evaluations)


def _predict_chunk(queries: Sequence[Query], model: Model, beam: int, k: int, activation) -> list[Prediction]:
    return [beam_search(q, model, beam, k, activation) for q in queries]


def batch_predict(
    queries: Sequence[Query],
    model: Model,
    beam: Optional[int] = None,
    k: int = 10,
    n_jobs: int = 1,
    activation: Optional[Activation] = None,
    chunk_size: int = 256
) -> list[Prediction]:
    """クエリごとに beam_search を並列適用 (出力順は入力順)"""
    queries = list(queries)
    if not queries:
        return []
    # 共有キャッシュを先に作ってからスレッドへ渡す
    _ = model.row_major, model.chain.children
    chunks = [queries[i:i + chunk_size] for i in range(0, len(queries), chunk_size)]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_predict_chunk)(chunk, model, beam, k, activation) for chunk in chunks
    )
    predictions = [p for chunk in results for p in chunk]
    logger.debug(f"バッチ推論完了: {len(predictions)}件")
    return predictions
