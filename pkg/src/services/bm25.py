"""
Okapi-BM25 語彙マッチングベースライン
ラベル文書の転置インデックスを作り、クエリとの BM25 スコアで上位 k 件を返す
"""
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from src.exceptions import VocabularyError
from src.models.params import VectorizerConfig
from src.models.xmc_model import Prediction
from src.services.text_vectorizer import normalize_text, tokenize

logger = logging.getLogger(__name__)

DEFAULT_K1 = 0.5
DEFAULT_B = 0.45


@dataclass
class InvertedIndex:
    """トークン → (文書ID昇順, 出現回数) の転置インデックス"""
    postings: dict[str, tuple[np.ndarray, np.ndarray]]
    doc_lengths: np.ndarray
    avgdl: float
    n_docs: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    config: VectorizerConfig = field(default_factory=VectorizerConfig)

    def __post_init__(self):
        # idf = ln((N - df + 0.5) / (df + 0.5) + 1)
        self.idf = {
            token: math.log((self.n_docs - len(docs) + 0.5) / (len(docs) + 0.5) + 1.0)
            for token, (docs, _) in self.postings.items()
        }

    def tokens(self, text: str) -> list[str]:
        """ベクトル化と同じ正規化で単語に分割"""
        return tokenize(normalize_text(text, self.config))

    def scores(self, query: str) -> tuple[np.ndarray, np.ndarray]:
        """
        全文書に対する BM25 スコアと、クエリトークンを含む文書のマスク

        インデックスにないトークンは寄与しない。クエリの重複トークンはその回数だけ加算する。
        """
        scores = np.zeros(self.n_docs, dtype=np.float64)
        touched = np.zeros(self.n_docs, dtype=bool)
        norms = self.k1 * (1.0 - self.b + self.b * self.doc_lengths / self.avgdl)
        for token in self.tokens(query):
            entry = self.postings.get(token)
            if entry is None:
                continue
            docs, tfs = entry
            scores[docs] += self.idf[token] * tfs * (self.k1 + 1.0) / (tfs + norms[docs])
            touched[docs] = True
        return scores, touched


def bm25_build(
    documents: Iterable[str],
    k1: Optional[float] = None,
    b: Optional[float] = None,
    config: Optional[VectorizerConfig] = None
) -> InvertedIndex:
    """
    ラベル文書から転置インデックスを構築する (unigram のみ)

    Args:
        documents: ラベルテキスト (文書ID = 並び順)
        k1: tf 飽和パラメータ (省略時 0.5)
        b: 文書長正規化パラメータ (省略時 0.45)
        config: 正規化設定 (ベクトル化と共通)

    Returns:
        InvertedIndex: 構築済みインデックス
    """
    config = config or VectorizerConfig()
    k1 = DEFAULT_K1 if k1 is None else k1
    b = DEFAULT_B if b is None else b

    postings_lists: dict[str, list[tuple[int, int]]] = defaultdict(list)
    lengths = []
    for doc_id, text in enumerate(documents):
        tokens = tokenize(normalize_text(text, config))
        lengths.append(len(tokens))
        for token, tf in sorted(Counter(tokens).items()):
            postings_lists[token].append((doc_id, tf))

    if not lengths:
        raise VocabularyError("BM25 のコーパスが空です")
    doc_lengths = np.asarray(lengths, dtype=np.float64)
    avgdl = float(doc_lengths.mean())
    if avgdl <= 0:
        raise VocabularyError("全文書が空のため平均文書長が 0 です")

    postings = {
        token: (
            np.fromiter((d for d, _ in entries), dtype=np.int64, count=len(entries)),
            np.fromiter((tf for _, tf in entries), dtype=np.float64, count=len(entries)),
        )
        for token, entries in sorted(postings_lists.items())
    }
    index = InvertedIndex(postings, doc_lengths, avgdl, len(lengths), k1, b, config)
    logger.info(f"BM25 インデックス構築完了: 文書数 {index.n_docs}, トークン数 {len(postings)}")
    return index


def bm25_topk(query: str, index: InvertedIndex, k: int) -> Prediction:
    """BM25 スコア上位 k 文書 (同率は文書ID昇順、一致トークンのない文書は返さない)"""
    scores, touched = index.scores(query)
    candidates = np.flatnonzero(touched)
    if len(candidates) == 0:
        return Prediction(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64))
    order = np.lexsort((candidates, -scores[candidates]))[:k]
    chosen = candidates[order]
    return Prediction(chosen.astype(np.int64), scores[chosen])
