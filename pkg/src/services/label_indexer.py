"""
ラベル索引サービス
ラベル埋め込み (PIFA) の構築と、バランス型 B 分木による階層ラベル木の生成を行う
"""
import logging
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed
from sklearn.preprocessing import normalize

from src.exceptions import ShapeMismatchError, TreeBuildError
from src.models.params import TreeConfig
from src.models.tree import ClusterChain
from src.models.vocabulary import Vocabulary
from src.services.text_vectorizer import transform_batch

logger = logging.getLogger(__name__)


def _normalize_rows(matrix: sp.csr_matrix) -> sp.csr_matrix:
    """各行を l2 正規化 (ゼロ行はそのまま)"""
    matrix = matrix.tocsr().astype(np.float64)
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return sp.csr_matrix(normalize(matrix, norm="l2", axis=1))


def pifa_embeddings(X: sp.csr_matrix, Y: sp.csr_matrix) -> sp.csr_matrix:
    """
    正例クエリ特徴の集約によるラベル埋め込み

    v_ℓ = Σ_i Y_iℓ x_i, z_ℓ = v_ℓ / ||v_ℓ|| (正例のないラベルはゼロ行)

    Args:
        X: n × d クエリ特徴 (行は l2 正規化済み)
        Y: n × L 二値関連行列

    Returns:
        L × d の CSR 行列
    """
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatchError(f"X の行数 {X.shape[0]} と Y の行数 {Y.shape[0]} が一致しません")
    V = sp.csr_matrix(Y.T.tocsr().astype(np.float64) @ X.tocsr())
    Z = _normalize_rows(V)
    n_empty = int(np.sum(np.diff(Z.indptr) == 0))
    if n_empty:
        logger.info(f"正例のないラベル: {n_empty}件 (ゼロ埋め込み)")
    return Z


def label_text_embeddings(titles: Iterable[str], vocab: Vocabulary) -> sp.csr_matrix:
    """ラベルタイトルの TF-IDF 特徴をラベル埋め込みとして使う"""
    return transform_batch(titles, vocab)


def tree_depth(n_labels: int, branching_factor: int, max_leaf: int) -> int:
    """
    葉クラスタが max_leaf 以下になる最小の深さ

    D = ceil(log_B(L / max_leaf)) + 1 (L <= max_leaf なら 1) を整数演算で求める
    """
    if n_labels < 1:
        raise TreeBuildError("ラベル集合が空です")
    height = 0
    capacity = max_leaf
    while capacity < n_labels:
        capacity *= branching_factor
        height += 1
    return height + 1


def expected_layer_widths(n_labels: int, branching_factor: int, max_leaf: int) -> list[int]:
    """
    ラベルを実際に分割せずに K_1..K_D を求める

    各親は min(B, サイズ) 個の子にバランス分割される。
    """
    depth = tree_depth(n_labels, branching_factor, max_leaf)
    widths = []
    sizes = {n_labels: 1}   # クラスタサイズ → 個数
    for _ in range(1, depth):
        next_sizes: dict[int, int] = {}
        for size, count in sizes.items():
            groups = min(branching_factor, size)
            base, extra = divmod(size, groups)
            if extra:
                next_sizes[base + 1] = next_sizes.get(base + 1, 0) + count * extra
            next_sizes[base] = next_sizes.get(base, 0) + count * (groups - extra)
        sizes = next_sizes
        widths.append(sum(sizes.values()))
    widths.append(n_labels)
    return widths


def _kmeans_plus_plus(rows: sp.csr_matrix, n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """コサイン距離に基づく k-means++ 初期化"""
    n = rows.shape[0]
    chosen = [int(rng.integers(n))]
    best_sim = np.asarray((rows @ rows[chosen[0]].T).todense()).ravel()
    for _ in range(1, n_groups):
        dist = np.clip(1.0 - best_sim, 0.0, None)
        dist[chosen] = 0.0
        weights = dist * dist
        total = weights.sum()
        if total <= 0.0:
            # 全行が同一方向: 未選択の行から一様に選ぶ
            candidates = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(candidates))
        else:
            pick = int(rng.choice(n, p=weights / total))
        chosen.append(pick)
        sim = np.asarray((rows @ rows[pick].T).todense()).ravel()
        np.maximum(best_sim, sim, out=best_sim)
    return np.asarray(rows[chosen].todense())


def _capacity_ok(size: int, base: int, hi_used: int, extra: int) -> bool:
    return size < base or (size == base and hi_used < extra)


def _balanced_assign(sims: np.ndarray, n_total: int) -> np.ndarray:
    """
    サイズ制約付きの貪欲割り当て

    マージン (最良 - 次点の類似度) の大きい行から順に、空きのある最も近いグループへ。
    グループ容量は n_total を基準に base または base+1。
    """
    n, n_groups = sims.shape
    base, extra = divmod(n_total, n_groups)
    preference = np.argsort(-sims, axis=1, kind="stable")
    ordered = np.take_along_axis(sims, preference, axis=1)
    margin = ordered[:, 0] - ordered[:, 1] if n_groups > 1 else ordered[:, 0]
    rank = np.lexsort((np.arange(n), -margin))

    sizes = np.zeros(n_groups, dtype=np.int64)
    hi_used = 0
    assignment = np.empty(n, dtype=np.int64)
    for i in rank:
        for g in preference[i]:
            if _capacity_ok(sizes[g], base, hi_used, extra):
                if sizes[g] == base:
                    hi_used += 1
                sizes[g] += 1
                assignment[i] = g
                break
    return assignment


def _fill_round_robin(assignment: np.ndarray, pending: np.ndarray, n_groups: int) -> None:
    """残りの行を容量に空きのあるグループへ巡回的に割り当てる"""
    n_total = len(assignment)
    base, extra = divmod(n_total, n_groups)
    assigned = assignment[assignment >= 0]
    sizes = np.bincount(assigned, minlength=n_groups)
    hi_used = int(np.sum(sizes > base))
    g = 0
    for row in pending:
        while not _capacity_ok(sizes[g], base, hi_used, extra):
            g = (g + 1) % n_groups
        if sizes[g] == base:
            hi_used += 1
        sizes[g] += 1
        assignment[row] = g
        g = (g + 1) % n_groups


def balanced_spherical_kmeans(
    rows: sp.csr_matrix,
    n_groups: int,
    seed,
    max_iters: int = 20,
    tol: float = 1e-4,
    history: Optional[list[float]] = None
) -> np.ndarray:
    """
    サイズ均衡つき球面 k-means

    Args:
        rows: 分割対象の埋め込み行 (l2 正規化済み、ゼロ行を含みうる)
        n_groups: グループ数 B
        seed: 乱数シード (int または int の列)
        max_iters: 最大反復回数
        tol: 行あたり平均目的関数の改善量の閾値
        history: 指定時は採用した反復の目的関数値を追記する (単調非減少)

    Returns:
        目的関数が最良だった割り当て (サイズ差は最大 1)
    """
    rows = sp.csr_matrix(rows)
    n = rows.shape[0]
    if n < n_groups:
        raise TreeBuildError(f"行数 {n} が分割数 {n_groups} より少ないため分割できません")

    assignment = np.full(n, -1, dtype=np.int64)
    row_nnz = np.diff(rows.indptr)
    nonzero = np.flatnonzero(row_nnz > 0)
    zero = np.flatnonzero(row_nnz == 0)

    if len(nonzero) < n_groups:
        # 有効な行が少ない: 1 行ずつ別グループへ
        assignment[nonzero] = np.arange(len(nonzero))
        _fill_round_robin(assignment, zero, n_groups)
        return assignment

    rng = np.random.default_rng(seed)
    active = _normalize_rows(rows[nonzero])
    centroids = _kmeans_plus_plus(active, n_groups, rng)

    best_objective = -np.inf
    best = np.zeros(len(nonzero), dtype=np.int64)
    for _ in range(max_iters):
        sims = np.asarray(active @ centroids.T)
        current = _balanced_assign(sims, n)

        # 重心 = 正規化したグループ平均。このとき Σ cos = Σ ||グループ和||
        indicator = sp.csr_matrix(
            (np.ones(len(current)), (current, np.arange(len(current)))),
            shape=(n_groups, len(current)),
        )
        sums = np.asarray((indicator @ active).todense())
        norms = np.linalg.norm(sums, axis=1)
        objective = float(norms.sum()) / len(nonzero)
        if objective <= best_objective:
            break
        gain = objective - best_objective
        best_objective, best = objective, current
        if history is not None:
            history.append(objective)

        # 空グループは前の重心を保持
        filled = norms > 0
        centroids[filled] = sums[filled] / norms[filled, None]
        if gain < tol:
            break

    assignment[nonzero] = best
    _fill_round_robin(assignment, zero, n_groups)
    return assignment


def _split_cluster(
    Z: sp.csr_matrix,
    labels: np.ndarray,
    config: TreeConfig,
    layer: int,
    parent: int
) -> list[np.ndarray]:
    """1 つの親クラスタを min(B, サイズ) 個の子に分割"""
    n_groups = min(config.branching_factor, len(labels))
    if n_groups == 1:
        return [labels]
    assignment = balanced_spherical_kmeans(
        Z[labels],
        n_groups,
        seed=[config.seed, layer, parent],
        max_iters=config.kmeans_max_iters,
        tol=config.kmeans_tol,
    )
    return [labels[assignment == g] for g in range(n_groups)]


def build_tree(Z: sp.csr_matrix, config: TreeConfig, n_jobs: int = 1) -> ClusterChain:
    """
    階層ラベル木をトップダウンに構築する

    Args:
        Z: L × d ラベル埋め込み
        config: 木の設定
        n_jobs: 兄弟クラスタ分割の並列数

    Returns:
        ClusterChain: C(1..D)
    """
    Z = sp.csr_matrix(Z)
    n_labels = Z.shape[0]
    if n_labels < 1:
        raise TreeBuildError("ラベル集合が空です")

    depth = tree_depth(n_labels, config.branching_factor, config.max_leaf)
    logger.info(
        f"ラベル木構築開始: L={n_labels}, B={config.branching_factor}, "
        f"max_leaf={config.max_leaf}, D={depth}"
    )
    if depth == 1:
        return ClusterChain(parents=[np.zeros(n_labels, dtype=np.int64)])

    clusters = [np.arange(n_labels)]
    parents: list[np.ndarray] = []
    with Parallel(n_jobs=n_jobs, prefer="threads") as parallel:
        for layer in range(1, depth):
            splits = parallel(
                delayed(_split_cluster)(Z, labels, config, layer, k)
                for k, labels in enumerate(clusters)
            )
            next_clusters: list[np.ndarray] = []
            parent_of: list[int] = []
            for k, groups in enumerate(splits):
                for group in groups:
                    next_clusters.append(group)
                    parent_of.append(k)
            parents.append(np.asarray(parent_of, dtype=np.int64))
            clusters = next_clusters
            sizes = [len(c) for c in clusters]
            logger.info(f"層 {layer}: クラスタ数 {len(clusters)}, サイズ {min(sizes)}〜{max(sizes)}")

    leaf_parent = np.empty(n_labels, dtype=np.int64)
    for j, labels in enumerate(clusters):
        leaf_parent[labels] = j
    parents.append(leaf_parent)

    chain = ClusterChain(parents=parents)
    expected = expected_layer_widths(n_labels, config.branching_factor, config.max_leaf)
    if chain.layer_widths != expected:
        raise TreeBuildError(f"層幅 {chain.layer_widths} が想定 {expected} と一致しません")
    if chain.cluster_sizes(depth - 1).max() > config.max_leaf:
        raise TreeBuildError(f"葉クラスタが max_leaf={config.max_leaf} を超えています")
    logger.info(f"ラベル木構築完了: 層幅 {chain.layer_widths}")
    return chain
