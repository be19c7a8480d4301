"""
語彙データモデル
"""
from dataclasses import dataclass, field

import numpy as np

from src.models.params import VectorizerConfig

# 特徴ファミリー (ID の割り当て順)
FAMILIES = ("unigram", "bigram", "trigram")


@dataclass
class Vocabulary:
    """n-gram トークン → 特徴ID の対応表"""
    token_to_id: dict[str, dict[str, int]]   # ファミリー別のトークン→ID
    doc_freq: np.ndarray                     # 特徴ごとの文書頻度 (OOV は 0)
    n_docs: int                              # コーパス文書数
    config: VectorizerConfig = field(default_factory=VectorizerConfig)

    def __post_init__(self):
        self.idf = self._compute_idf()

    @property
    def oov_id(self) -> int:
        """未知トークン共有ID (常に最後)"""
        return len(self.doc_freq)

    @property
    def dim(self) -> int:
        """特徴次元 d (OOV スロットを含む)"""
        return len(self.doc_freq) + 1

    def family_size(self, family: str) -> int:
        return len(self.token_to_id.get(family, {}))

    def _compute_idf(self) -> np.ndarray:
        """平滑化 idf = ln((N+1)/(df+1)) + 1、OOV は 1"""
        idf = np.ones(self.dim, dtype=np.float64)
        df = np.asarray(self.doc_freq, dtype=np.float64)
        idf[: len(df)] = np.log((self.n_docs + 1.0) / (df + 1.0)) + 1.0
        return idf
