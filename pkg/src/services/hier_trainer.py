"""
階層 OVR 学習サービス
各層の重み行列 W(t) をトップダウンに学習し、ハード閾値で疎化する
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy.optimize import minimize

from src.exceptions import ShapeMismatchError
from src.models.params import LossType, NegativeSampling, TrainConfig
from src.models.tree import ClusterChain
from src.models.xmc_model import LayeredWeights
from src.utils.kernels import dcd_squared_hinge

logger = logging.getLogger(__name__)


@dataclass
class LayerStats:
    """層ごとの学習統計"""
    layer: int
    n_columns: int
    active_rows: int = 0          # 全サブ問題のアクティブ行数の合計
    empty_columns: int = 0        # アクティブ集合が空の列
    nnz: int = 0
    objective: float = 0.0

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "n_columns": self.n_columns,
            "active_rows": self.active_rows,
            "empty_columns": self.empty_columns,
            "nnz": self.nnz,
            "objective": round(self.objective, 6),
        }


@dataclass
class ColumnResult:
    """1 列分の解 (枝刈り済み、グローバル特徴ID)"""
    column: int
    indices: np.ndarray
    values: np.ndarray
    active: int
    objective: float


@dataclass
class TrainResult:
    weights: LayeredWeights
    stats: list[LayerStats] = field(default_factory=list)


def _binarize(matrix: sp.spmatrix) -> sp.csr_matrix:
    """正の要素を 1 にする"""
    matrix = sp.csr_matrix(matrix)
    matrix.data = (matrix.data > 0).astype(np.float64)
    matrix.eliminate_zeros()
    return matrix


def induce_label_chain(Y: sp.csr_matrix, chain: ClusterChain) -> list[sp.csr_matrix]:
    """
    各層の誘導ラベル行列 Y(1..D)

    Y(D) = Y, Y(t-1) = binarize(Y(t) · C(t))

    Returns:
        [Y(1), ..., Y(D)]
    """
    if Y.shape[1] != chain.n_labels:
        raise ShapeMismatchError(f"Y の列数 {Y.shape[1]} とラベル数 {chain.n_labels} が一致しません")
    layers = [_binarize(Y)]
    for t in range(chain.depth, 1, -1):
        layers.append(_binarize(layers[-1] @ chain.indicator(t)))
    layers.reverse()
    return layers


def tfn_mask(Y_parent: sp.csr_matrix) -> sp.csc_matrix:
    """
    Teacher Forcing Negatives のマスク M(t) = Y(t-1)

    子 ℓ のアクティブ集合は、親クラスタ c_ℓ が正解のインスタンスのみ
    """
    return sp.csc_matrix(_binarize(Y_parent))


def _active_rows(mask: sp.csc_matrix | None, parent: int, n_rows: int) -> np.ndarray:
    """親 parent の子に共通するアクティブ行 (マスクなしは全行)"""
    if mask is None:
        return np.arange(n_rows)
    return np.sort(mask.indices[mask.indptr[parent]:mask.indptr[parent + 1]])


def _squared_hinge_objective(X: sp.csr_matrix, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    margins = np.maximum(0.0, 1.0 - y * (X @ w))
    return float(np.dot(margins, margins) + 0.5 * lam * np.dot(w, w))


def _logistic_objective(X: sp.csr_matrix, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    return float(np.logaddexp(0.0, -y * (X @ w)).sum() + 0.5 * lam * np.dot(w, w))


def _solve_logistic(X: sp.csr_matrix, y: np.ndarray, lam: float, max_iters: int, tol: float) -> np.ndarray:
    """L2 正則化ロジスティック回帰 (L-BFGS)"""

    def fun(w):
        z = y * (X @ w)
        loss = np.logaddexp(0.0, -z).sum() + 0.5 * lam * np.dot(w, w)
        coef = -y * np.exp(-np.logaddexp(0.0, z))   # -y σ(-z)
        grad = X.T @ coef + lam * w
        return loss, grad

    result = minimize(
        fun,
        np.zeros(X.shape[1]),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iters, "gtol": tol * 1e-3},
    )
    return result.x


def solve_binary(
    X_active: sp.csr_matrix,
    y_signs: np.ndarray,
    lam: float,
    max_iters: int = 100,
    tol: float = 0.1,
    seed: int = 0,
    loss: LossType = LossType.SQUARED_HINGE
) -> np.ndarray:
    """
    二値分類サブ問題を解く

    Args:
        X_active: アクティブ行の特徴行列
        y_signs: ±1 の目的変数
        lam: L2 正則化係数 λ
        max_iters: 最大エポック数
        tol: 相対射影勾配ノルムの停止閾値
        seed: 座標順序のシード
        loss: 損失関数

    Returns:
        重みベクトル w (X_active の列数と同じ長さ)。アクティブ行が空ならゼロベクトル
    """
    X_active = sp.csr_matrix(X_active, dtype=np.float64)
    n_features = X_active.shape[1]
    if X_active.shape[0] == 0:
        return np.zeros(n_features)
    y = np.asarray(y_signs, dtype=np.float64)
    if loss == LossType.LOGISTIC:
        return _solve_logistic(X_active, y, lam, max_iters, tol)
    w, _, _ = dcd_squared_hinge(
        X_active.indptr.astype(np.int64),
        X_active.indices.astype(np.int64),
        X_active.data,
        y,
        float(lam),
        int(max_iters),
        float(tol),
        int(seed) % (2**32),
        n_features,
    )
    return w


def _column_seed(seed: int, layer: int, column: int) -> int:
    """(seed, 層, 列) から決定的なシードを導出"""
    return int(np.random.SeedSequence([seed, layer, column]).generate_state(1)[0])


def _solve_parent_group(
    X: sp.csr_matrix,
    Y_t: sp.csc_matrix,
    active_rows: np.ndarray,
    children: np.ndarray,
    layer: int,
    config: TrainConfig
) -> list[ColumnResult]:
    """同じ親を持つ子列をまとめて解く (アクティブ行を共有)"""
    results = []
    if len(active_rows) == 0:
        for column in children:
            results.append(ColumnResult(int(column), np.zeros(0, dtype=np.int32), np.zeros(0), 0, 0.0))
        return results

    X_sub = X[active_rows]
    # アクティブ行に現れる特徴だけのローカル座標系で解く
    features = np.unique(X_sub.indices)
    local = sp.csr_matrix(
        (X_sub.data, np.searchsorted(features, X_sub.indices), X_sub.indptr),
        shape=(X_sub.shape[0], len(features)),
    )
    for column in children:
        start, end = Y_t.indptr[column], Y_t.indptr[column + 1]
        positives = Y_t.indices[start:end]
        y = np.where(np.isin(active_rows, positives, assume_unique=True), 1.0, -1.0)
        w = solve_binary(
            local,
            y,
            config.lambda_,
            config.solver_max_iters,
            config.solver_tol,
            _column_seed(config.seed, layer, int(column)),
            config.loss,
        )
        if config.loss == LossType.LOGISTIC:
            objective = _logistic_objective(local, y, w, config.lambda_)
        else:
            objective = _squared_hinge_objective(local, y, w, config.lambda_)
        # 解いた直後にハード閾値 (|w| > ε のみ保持)
        keep = np.abs(w) > config.prune_epsilon
        results.append(ColumnResult(
            int(column),
            features[keep].astype(np.int32),
            w[keep],
            len(active_rows),
            objective,
        ))
    return results


def _assemble_layer(results: list[ColumnResult], dim: int, n_columns: int) -> sp.csc_matrix:
    """列ごとの解を d × K_t の CSC 行列にまとめる"""
    ordered = sorted(results, key=lambda r: r.column)
    indptr = np.zeros(n_columns + 1, dtype=np.int64)
    for r in ordered:
        indptr[r.column + 1] = len(r.indices)
    np.cumsum(indptr, out=indptr)
    indices = np.concatenate([r.indices for r in ordered]) if ordered else np.zeros(0, dtype=np.int32)
    data = np.concatenate([r.values for r in ordered]) if ordered else np.zeros(0)
    return sp.csc_matrix((data, indices, indptr), shape=(dim, n_columns))


def train(
    X: sp.csr_matrix,
    Y: sp.csr_matrix,
    chain: ClusterChain,
    config: TrainConfig
) -> TrainResult:
    """
    階層モデルをトップダウンに学習する

    Args:
        X: n × d クエリ特徴 (行は l2 正規化済み)
        Y: n × L 二値関連行列
        chain: クラスタ指示行列の列
        config: 学習設定

    Returns:
        TrainResult: 枝刈り済みの重みと層ごとの統計
    """
    X = sp.csr_matrix(X, dtype=np.float64)
    X.sort_indices()
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatchError(f"X の行数 {X.shape[0]} と Y の行数 {Y.shape[0]} が一致しません")

    label_layers = induce_label_chain(Y, chain)
    root = _binarize(label_layers[0] @ chain.indicator(1))   # Y(0)
    matrices: list[sp.csc_matrix] = []
    stats: list[LayerStats] = []

    with Parallel(n_jobs=config.threads, prefer="threads") as parallel:
        for t in range(1, chain.depth + 1):
            Y_parent = root if t == 1 else label_layers[t - 2]
            mask = tfn_mask(Y_parent) if config.neg_sampling == NegativeSampling.TFN else None
            Y_t = sp.csc_matrix(label_layers[t - 1])
            Y_t.sort_indices()
            child_indptr, child_indices = chain.children[t - 1]

            groups = parallel(
                delayed(_solve_parent_group)(
                    X,
                    Y_t,
                    _active_rows(mask, k, X.shape[0]),
                    child_indices[child_indptr[k]:child_indptr[k + 1]],
                    t,
                    config,
                )
                for k in range(chain.width(t - 1))
            )
            results = [r for group in groups for r in group]
            W_t = _assemble_layer(results, X.shape[1], chain.width(t))
            matrices.append(W_t)

            layer_stats = LayerStats(
                layer=t,
                n_columns=chain.width(t),
                active_rows=int(sum(r.active for r in results)),
                empty_columns=int(sum(1 for r in results if r.active == 0)),
                nnz=int(W_t.nnz),
                objective=float(sum(r.objective for r in results)),
            )
            stats.append(layer_stats)
            if layer_stats.empty_columns:
                logger.warning(
                    f"層 {t}: アクティブ集合が空の列 {layer_stats.empty_columns}件 (ゼロ列)"
                )
            logger.info(
                f"層 {t} 学習完了: 列数 {layer_stats.n_columns}, "
                f"アクティブ行 {layer_stats.active_rows}, nnz {layer_stats.nnz}, "
                f"目的関数 {layer_stats.objective:.4f}"
            )

    return TrainResult(weights=LayeredWeights(matrices), stats=stats)


def prune(weights: LayeredWeights, epsilon: float) -> LayeredWeights:
    """
    ハード閾値による重みの疎化 (|w| > ε の要素のみ保持)

    prune(prune(W, ε1), ε2) == prune(W, max(ε1, ε2))
    """
    if epsilon < 0:
        raise ValueError("ε は 0 以上である必要があります")
    pruned = []
    for w in weights.matrices:
        w = sp.csc_matrix(w, copy=True)
        w.data[np.abs(w.data) <= epsilon] = 0.0
        w.eliminate_zeros()
        pruned.append(w)
    return LayeredWeights(pruned)
