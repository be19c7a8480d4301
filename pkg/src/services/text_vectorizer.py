"""
n-gram TF-IDF 特徴量化サービス
クエリ・商品タイトルを l2 正規化済みの疎ベクトルに変換する
"""
import logging
import re
from collections import Counter
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from joblib import Parallel, delayed

from src.exceptions import VocabularyError
from src.models.params import VectorizerConfig
from src.models.sparse import SparseVector
from src.models.vocabulary import FAMILIES, Vocabulary

logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")
NGRAM_JOINER = "#"


def normalize_text(raw: str, config: VectorizerConfig) -> str:
    """小文字化・記号除去・空白の正規化"""
    text = raw.lower() if config.lowercase else raw
    if config.punctuation_set:
        text = text.translate({ord(c): " " for c in config.punctuation_set})
    return _WHITESPACE.sub(" ", text).strip()


def tokenize(normalized: str) -> list[str]:
    """空白区切りで単語に分割"""
    return normalized.split()


def word_ngrams(tokens: list[str], n: int) -> list[str]:
    """隣接する n 単語を '#' で連結"""
    if n < 1:
        raise ValueError("n は 1 以上である必要があります")
    if n == 1:
        return list(tokens)
    return [NGRAM_JOINER.join(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def char_trigrams(tokens: list[str]) -> list[str]:
    """
    単語境界内の文字 trigram

    各単語を "#w#" と埋めて 3 文字窓を滑らせる。1 文字の単語は "#w#" 1 個。
    """
    grams = []
    for word in tokens:
        padded = f"{NGRAM_JOINER}{word}{NGRAM_JOINER}"
        grams.extend(padded[i:i + 3] for i in range(len(padded) - 2))
    return grams


def extract_features(raw: str, config: VectorizerConfig) -> dict[str, list[str]]:
    """正規化 → 分割 → 有効なファミリーごとの n-gram"""
    tokens = tokenize(normalize_text(raw, config))
    features: dict[str, list[str]] = {}
    if config.max_unigrams > 0:
        features["unigram"] = tokens
    if config.max_bigrams > 0:
        features["bigram"] = word_ngrams(tokens, 2)
    if config.max_char_trigrams > 0:
        features["trigram"] = char_trigrams(tokens)
    return features


def _count_document_frequencies(
    documents: list[str],
    config: VectorizerConfig
) -> dict[str, Counter]:
    """文書頻度をファミリーごとに数える (1文書で1回)"""
    counts = {name: Counter() for name in FAMILIES}
    for doc in documents:
        for family, grams in extract_features(doc, config).items():
            counts[family].update(set(grams))
    return counts


def _top_tokens(counter: Counter, budget: int) -> list[tuple[str, int]]:
    """文書頻度の降順、同率は辞書順昇順で上位 budget 件"""
    ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:budget]


def fit(
    corpus: Iterable[str],
    config: VectorizerConfig,
    n_jobs: int = 1,
    chunk_size: int = 10_000
) -> Vocabulary:
    """
    コーパスから語彙を構築する

    Args:
        corpus: 文書の反復子
        config: 特徴量化設定
        n_jobs: 文書頻度集計の並列数
        chunk_size: 並列集計のチャンクサイズ

    Returns:
        Vocabulary: 語彙 (ID はファミリー順に密、OOV は最後)
    """
    documents = list(corpus)
    if not documents:
        raise VocabularyError("コーパスが空のため語彙を構築できません")

    chunks = [documents[i:i + chunk_size] for i in range(0, len(documents), chunk_size)]
    partials = Parallel(n_jobs=n_jobs)(
        delayed(_count_document_frequencies)(chunk, config) for chunk in chunks
    )

    # チャンクごとの集計をマージ
    merged = {name: Counter() for name in FAMILIES}
    for partial in partials:
        for name in FAMILIES:
            merged[name].update(partial[name])

    budgets = {
        "unigram": config.max_unigrams,
        "bigram": config.max_bigrams,
        "trigram": config.max_char_trigrams,
    }
    token_to_id: dict[str, dict[str, int]] = {}
    doc_freq: list[int] = []
    for name in FAMILIES:
        kept = _top_tokens(merged[name], budgets[name])
        token_to_id[name] = {}
        for token, df in kept:
            token_to_id[name][token] = len(doc_freq)
            doc_freq.append(df)

    vocab = Vocabulary(
        token_to_id=token_to_id,
        doc_freq=np.asarray(doc_freq, dtype=np.int64),
        n_docs=len(documents),
        config=config.model_copy(),
    )
    logger.info(
        f"語彙構築完了: 文書数 {vocab.n_docs}, "
        f"unigram {vocab.family_size('unigram')}, bigram {vocab.family_size('bigram')}, "
        f"trigram {vocab.family_size('trigram')}, 次元 {vocab.dim}"
    )
    return vocab


def transform(raw: str, vocab: Vocabulary) -> SparseVector:
    """
    テキストを TF-IDF 疎ベクトルに変換する

    重み = 生の出現回数 × idf、未知トークンは共有 OOV ID に集約し、最後に l2 正規化
    """
    counts: Counter = Counter()
    oov_id = vocab.oov_id
    for family, grams in extract_features(raw, vocab.config).items():
        lookup = vocab.token_to_id.get(family, {})
        for gram in grams:
            counts[lookup.get(gram, oov_id)] += 1

    if not counts:
        return SparseVector.empty(vocab.dim)

    indices = np.fromiter(sorted(counts), dtype=np.int32, count=len(counts))
    tf = np.fromiter((counts[i] for i in indices), dtype=np.float64, count=len(indices))
    values = tf * vocab.idf[indices]
    values /= np.linalg.norm(values)
    return SparseVector(vocab.dim, indices, values)


def transform_batch(texts: Iterable[str], vocab: Vocabulary) -> sp.csr_matrix:
    """複数テキストを n × d の CSR 行列に変換"""
    indptr = [0]
    indices: list[np.ndarray] = []
    values: list[np.ndarray] = []
    for text in texts:
        vec = transform(text, vocab)
        indices.append(vec.indices)
        values.append(vec.values)
        indptr.append(indptr[-1] + vec.nnz)
    n_rows = len(indptr) - 1
    matrix = sp.csr_matrix(
        (
            np.concatenate(values) if values else np.zeros(0),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int32),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(n_rows, vocab.dim),
    )
    return matrix
