"""
データセット読み込みサービス
クエリ-ラベル対の TSV、テスト TSV、SVMLight、npz 形式の入力を扱う
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from sklearn.datasets import load_svmlight_file

from src.exceptions import DataFormatError, ShapeMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class PairsDataset:
    """ingest の結果 (クエリ文書・二値関連行列・ラベルID対応)"""
    queries: list[str]                       # 行 i のクエリテキスト
    Y: sp.csr_matrix                         # n × L 二値行列
    label_ids: list[str]                     # 内部ID → 外部ラベルID
    times: Optional[np.ndarray] = None       # クエリごとの時刻列 (分割用)
    n_dropped: int = 0                       # 閾値未満で落とした対の数

    def relevant_labels(self) -> list[list[str]]:
        """各クエリの正解ラベル (外部ID)"""
        Y = self.Y
        return [
            [self.label_ids[j] for j in Y.indices[Y.indptr[i]:Y.indptr[i + 1]]]
            for i in range(Y.shape[0])
        ]

    def subset(self, rows: np.ndarray) -> "PairsDataset":
        return PairsDataset(
            queries=[self.queries[i] for i in rows],
            Y=self.Y[rows],
            label_ids=self.label_ids,
            times=None if self.times is None else self.times[rows],
        )


@dataclass
class EvalSet:
    """評価用クエリと正解ラベル集合 (内部ID)"""
    queries: list[str]
    truths: list[set[int]]
    unknown_labels: list[str] = field(default_factory=list)   # 学習側に存在しない外部ID


def _parse_count(value: str, line_number: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataFormatError(f"カウント列が数値ではありません: {value!r}", line_number)


def ingest(
    path: PathLike,
    threshold: float = 1,
    label_catalog: Optional[Sequence[str]] = None
) -> PairsDataset:
    """
    クエリ-ラベル対の TSV を読み込み、二値関連行列を作る

    形式: query<TAB>label[<TAB>count[<TAB>time]]
    同じ対のカウントは合算し、閾値以上のものを正例にする。
    ラベルIDはカタログ順 (指定時) に続けて初出順で連番を振る。

    Args:
        path: TSV ファイル
        threshold: 正例とするカウントの下限
        label_catalog: 既知のラベルID (コールドスタートのラベルにも ID を与える)

    Returns:
        PairsDataset: 読み込み結果
    """
    counts: "OrderedDict[tuple[str, str], float]" = OrderedDict()
    first_time: dict[str, float] = {}
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2 or len(parts) > 4:
                raise DataFormatError(f"列数が不正です ({len(parts)}列)", line_number)
            query, label = parts[0].strip(), parts[1].strip()
            if not query or not label:
                raise DataFormatError("クエリまたはラベルが空です", line_number)
            count = _parse_count(parts[2], line_number) if len(parts) >= 3 else 1.0
            if len(parts) == 4:
                time_value = _parse_count(parts[3], line_number)
                first_time[query] = min(first_time.get(query, time_value), time_value)
            counts[(query, label)] = counts.get((query, label), 0.0) + count

    label_index: dict[str, int] = {}
    for label in label_catalog or []:
        label_index.setdefault(label, len(label_index))
    query_index: dict[str, int] = {}
    rows, cols = [], []
    n_dropped = 0
    for (query, label), count in counts.items():
        if count < threshold:
            n_dropped += 1
            continue
        rows.append(query_index.setdefault(query, len(query_index)))
        cols.append(label_index.setdefault(label, len(label_index)))

    if not rows:
        raise DataFormatError(f"閾値 {threshold} 以上の対がありません")

    Y = sp.csr_matrix(
        (np.ones(len(rows)), (np.asarray(rows), np.asarray(cols))),
        shape=(len(query_index), len(label_index)),
    )
    Y.sum_duplicates()
    Y.data[:] = 1.0
    Y.sort_indices()

    queries = list(query_index)
    times = None
    if first_time:
        times = np.asarray([first_time.get(q, np.inf) for q in queries], dtype=np.float64)
    logger.info(
        f"対データ読み込み完了: クエリ数 {len(queries)}, ラベル数 {len(label_index)}, "
        f"正例 {Y.nnz}件, 閾値未満 {n_dropped}件"
    )
    return PairsDataset(queries, Y, list(label_index), times, n_dropped)


def read_label_catalog(path: PathLike) -> tuple[list[str], list[str]]:
    """label<TAB>title のカタログを読み込む"""
    ids, titles = [], []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("ラベルカタログは2列である必要があります", line_number)
            ids.append(parts[0].strip())
            titles.append(parts[1])
    return ids, titles


def align_titles(label_ids: Sequence[str], catalog_ids: Sequence[str], titles: Sequence[str]) -> list[str]:
    """内部ID順のタイトル (カタログにないラベルは空文字)"""
    lookup = dict(zip(catalog_ids, titles))
    return [lookup.get(label, "") for label in label_ids]


def read_test_tsv(path: PathLike, label_map: Optional[dict[str, int]] = None) -> EvalSet:
    """
    評価用 TSV (query<TAB>カンマ区切りラベルID) を読み込む

    学習側にないラベルには L 以降の ID を振り、予測されない正解として数える。
    label_map を省略した場合は全ラベルに初出順で ID を振る (unknown_labels が対応表になる)
    """
    known = label_map if label_map is not None else {}
    queries: list[str] = []
    truths: list[set[int]] = []
    unknown: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError("評価データは2列である必要があります", line_number)
            truth = set()
            for label in (l.strip() for l in parts[1].split(",")):
                if not label:
                    continue
                if label in known:
                    truth.add(known[label])
                else:
                    truth.add(unknown.setdefault(label, len(known) + len(unknown)))
            queries.append(parts[0])
            truths.append(truth)
    if unknown and label_map is not None:
        logger.warning(f"学習データにないラベルが評価データに含まれます: {len(unknown)}件")
    return EvalSet(queries, truths, list(unknown))


def write_test_tsv(path: PathLike, queries: Sequence[str], truths: Sequence[Sequence[str]]) -> None:
    lines = [f"{q}\t{','.join(t)}" for q, t in zip(queries, truths)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_svmlight(path: PathLike, n_features: Optional[int] = None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """SVMLight マルチラベル形式から (X, Y) を読み込む"""
    try:
        X, labels = load_svmlight_file(str(path), n_features=n_features, multilabel=True)
    except ValueError as e:
        raise DataFormatError(f"SVMLight の読み込みに失敗しました: {e}")
    rows, cols = [], []
    for i, row_labels in enumerate(labels):
        for label in row_labels:
            rows.append(i)
            cols.append(int(label))
    n_labels = max(cols) + 1 if cols else 0
    Y = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(X.shape[0], n_labels))
    Y.sum_duplicates()
    Y.data[:] = 1.0
    return sp.csr_matrix(X, dtype=np.float64), Y


def load_npz_pair(x_path: PathLike, y_path: PathLike) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """scipy .npz の (X, Y) を読み込む"""
    X = sp.load_npz(x_path).tocsr().astype(np.float64)
    Y = sp.load_npz(y_path).tocsr().astype(np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatchError(f"X の行数 {X.shape[0]} と Y の行数 {Y.shape[0]} が一致しません")
    return X, Y


def truths_from_matrix(Y: sp.csr_matrix) -> list[set[int]]:
    """関連行列の各行を正解集合に変換"""
    Y = sp.csr_matrix(Y)
    return [set(Y.indices[Y.indptr[i]:Y.indptr[i + 1]].tolist()) for i in range(Y.shape[0])]


def random_split(n_rows: int, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """行のランダム分割 (学習, 評価)"""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction は (0, 1) の範囲で指定してください")
    order = np.random.default_rng(seed).permutation(n_rows)
    n_test = int(round(n_rows * test_fraction))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def split_by_column(times: np.ndarray, test_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """時刻列で分割 (新しい側を評価に回す、同時刻は行番号順)"""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction は (0, 1) の範囲で指定してください")
    order = np.lexsort((np.arange(len(times)), times))
    n_test = int(round(len(times) * test_fraction))
    cut = len(times) - n_test
    return np.sort(order[:cut]), np.sort(order[cut:])
