"""
合成データ生成サービス
トピック・ラベル固有語・同義語置換を持つクエリ-ラベル対と、大規模ラベル数のランダムモデルを作る
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from src.models.params import Activation
from src.models.tree import ClusterChain
from src.models.xmc_model import LayeredWeights, Model
from src.services.label_indexer import tree_depth

logger = logging.getLogger(__name__)

_CONSONANTS = "bdfghjklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SyntheticData:
    """合成データセット"""
    label_ids: list[str]
    titles: list[str]
    train_pairs: list[tuple[str, str, int, int]]        # (query, label, count, time)
    test_queries: list[str]
    test_truths: list[list[str]]

    def write(self, directory: Union[str, Path]) -> dict[str, Path]:
        """labels.tsv / train.tsv / test.tsv を書き出す"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "labels": directory / "labels.tsv",
            "train": directory / "train.tsv",
            "test": directory / "test.tsv",
        }
        paths["labels"].write_text(
            "".join(f"{l}\t{t}\n" for l, t in zip(self.label_ids, self.titles)), encoding="utf-8"
        )
        paths["train"].write_text(
            "".join(f"{q}\t{l}\t{c}\t{t}\n" for q, l, c, t in self.train_pairs), encoding="utf-8"
        )
        paths["test"].write_text(
            "".join(f"{q}\t{','.join(ls)}\n" for q, ls in zip(self.test_queries, self.test_truths)),
            encoding="utf-8",
        )
        return paths


class _WordFactory:
    """重複しない擬似単語を生成する"""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def new(self) -> str:
        while True:
            n_syllables = int(self.rng.integers(2, 5))
            word = "".join(
                _CONSONANTS[self.rng.integers(len(_CONSONANTS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                for _ in range(n_syllables)
            )
            if word not in self.used:
                self.used.add(word)
                return word


def generate(
    n_queries: int = 20_000,
    n_labels: int = 5_000,
    labels_per_topic: int = 50,
    words_per_topic: int = 6,
    broad_fraction: float = 0.3,
    train_synonym_rate: float = 0.5,
    test_synonym_fraction: float = 0.5,
    test_fraction: float = 0.2,
    seed: int = 0
) -> SyntheticData:
    """
    合成データセットを生成する

    ラベルはトピックに属し、タイトルは固有語 + トピック語から成る。各語には
    タイトルに現れない同義語があり、学習クエリでは語ごとに確率 train_synonym_rate で置換する。
    評価クエリの test_synonym_fraction は全語を同義語に置換し、残りは置換しない。

    Args:
        n_queries: クエリ総数 (学習 + 評価)
        n_labels: ラベル数
        labels_per_topic: トピックあたりのラベル数
        words_per_topic: トピック語の数
        broad_fraction: トピック語だけで複数ラベルに関連するクエリの割合
        train_synonym_rate: 学習クエリの語ごとの置換確率
        test_synonym_fraction: 全置換する評価クエリの割合
        test_fraction: 評価に回すクエリの割合
        seed: 乱数シード

    Returns:
        SyntheticData: 生成結果
    """
    rng = np.random.default_rng(seed)
    words = _WordFactory(rng)
    n_topics = max(1, n_labels // labels_per_topic)

    topic_words = [[words.new() for _ in range(words_per_topic)] for _ in range(n_topics)]
    label_topic = np.arange(n_labels) % n_topics
    identity = [words.new() for _ in range(n_labels)]
    canonical = [w for ws in topic_words for w in ws] + identity
    synonym = {w: words.new() for w in canonical}

    label_ids = [f"P{j:06d}" for j in range(n_labels)]
    titles = []
    for j in range(n_labels):
        tw = topic_words[label_topic[j]]
        picks = rng.choice(np.arange(1, words_per_topic), size=2, replace=False)
        titles.append(" ".join([identity[j], tw[0], tw[picks[0]], tw[picks[1]]]))

    members = [np.flatnonzero(label_topic == c) for c in range(n_topics)]

    def sample_query() -> tuple[list[str], list[int]]:
        if rng.random() < broad_fraction:
            topic = int(rng.integers(n_topics))
            tokens = list(rng.choice(topic_words[topic], size=2, replace=False))
            size = int(min(len(members[topic]), rng.integers(3, 9)))
            relevant = sorted(int(l) for l in rng.choice(members[topic], size=size, replace=False))
            return tokens, relevant
        label = int(rng.integers(n_labels))
        n_topic_tokens = int(rng.integers(1, 3))
        tokens = [identity[label]] + list(rng.choice(topic_words[label_topic[label]], size=n_topic_tokens, replace=False))
        rng.shuffle(tokens)
        return tokens, [label]

    n_test = int(round(n_queries * test_fraction))
    is_test = np.zeros(n_queries, dtype=bool)
    is_test[rng.permutation(n_queries)[:n_test]] = True

    train_pairs: list[tuple[str, str, int, int]] = []
    test_queries: list[str] = []
    test_truths: list[list[str]] = []
    n_substituted = 0
    for i in range(n_queries):
        tokens, relevant = sample_query()
        if is_test[i]:
            substituted = bool(rng.random() < test_synonym_fraction)
            if substituted:
                tokens = [synonym[t] for t in tokens]
            test_queries.append(" ".join(tokens))
            test_truths.append([label_ids[l] for l in relevant])
            n_substituted += substituted
        else:
            tokens = [synonym[t] if rng.random() < train_synonym_rate else t for t in tokens]
            query = " ".join(tokens)
            for label in relevant:
                train_pairs.append((query, label_ids[label], 1 + int(rng.poisson(2.0)), i))

    logger.info(
        f"合成データ生成完了: ラベル数 {n_labels}, トピック数 {n_topics}, "
        f"学習対 {len(train_pairs)}件, 評価クエリ {len(test_queries)}件 (同義語置換 {n_substituted}件)"
    )
    return SyntheticData(label_ids, titles, train_pairs, test_queries, test_truths)


def contiguous_chain(n_labels: int, branching_factor: int, max_leaf: int) -> ClusterChain:
    """ラベルを連続区間で均等に分割した木 (build_tree と同じ層幅)"""
    depth = tree_depth(n_labels, branching_factor, max_leaf)
    if depth == 1:
        return ClusterChain(parents=[np.zeros(n_labels, dtype=np.int64)])
    ranges = [(0, n_labels)]
    parents = []
    for _ in range(1, depth):
        next_ranges = []
        parent_of = []
        for k, (start, end) in enumerate(ranges):
            groups = min(branching_factor, end - start)
            bounds = np.linspace(start, end, groups + 1).round().astype(np.int64)
            for g in range(groups):
                next_ranges.append((int(bounds[g]), int(bounds[g + 1])))
                parent_of.append(k)
        parents.append(np.asarray(parent_of, dtype=np.int64))
        ranges = next_ranges
    leaf_parent = np.empty(n_labels, dtype=np.int64)
    for j, (start, end) in enumerate(ranges):
        leaf_parent[start:end] = j
    parents.append(leaf_parent)
    return ClusterChain(parents=parents)


def random_model(
    n_labels: int,
    branching_factor: int = 32,
    max_leaf: int = 100,
    dim: int = 10_000,
    nnz_per_column: int = 10,
    seed: int = 0,
    activation: Activation = Activation.L3_HINGE,
    default_beam: int = 10,
    chain: Optional[ClusterChain] = None
) -> Model:
    """
    ランダムな疎重みを持つモデル (推論の計測・検証用)

    各列は nnz_per_column 個の特徴にのみ非ゼロ重みを持つ
    """
    rng = np.random.default_rng(seed)
    chain = chain or contiguous_chain(n_labels, branching_factor, max_leaf)
    matrices = []
    for width in chain.layer_widths:
        per_column = min(nnz_per_column, dim)
        indices = _column_indices(rng, width, per_column, dim)
        data = rng.normal(0.0, 1.0, size=len(indices))
        indptr = np.arange(width + 1, dtype=np.int64) * per_column
        matrices.append(sp.csc_matrix((data, indices.astype(np.int32), indptr), shape=(dim, width)))
    return Model(LayeredWeights(matrices), chain, activation=activation, default_beam=default_beam)


def _column_indices(rng: np.random.Generator, width: int, per_column: int, dim: int) -> np.ndarray:
    """列内で重複しない昇順の特徴IDを一括生成 (等間隔のスロットに 1 個ずつ)"""
    slot = dim // per_column
    offsets = rng.integers(0, slot, size=(width, per_column))
    return (np.arange(per_column) * slot + offsets).ravel()
