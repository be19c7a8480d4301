"""
階層線形モデル データモデル
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from src.models.params import Activation
from src.models.tree import ClusterChain
from src.models.vocabulary import Vocabulary


@dataclass
class LayeredWeights:
    """層ごとの重み行列 W(t) ∈ R^{d × K_t} (CSC)"""
    matrices: list[sp.csc_matrix] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.matrices)

    @property
    def dim(self) -> int:
        return self.matrices[0].shape[0] if self.matrices else 0

    def nnz(self) -> int:
        return int(sum(w.nnz for w in self.matrices))


@dataclass
class Model:
    """推論用モデル (重み + 木 + 活性化 + 語彙)"""
    weights: LayeredWeights
    chain: ClusterChain
    activation: Activation = Activation.L3_HINGE
    default_beam: int = 10
    vocabulary: Optional[Vocabulary] = None
    label_ids: Optional[list[str]] = None   # 内部ID → 外部ラベルID

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """層間の形状整合性を確認"""
        if self.weights.depth != self.chain.depth:
            raise ValueError(
                f"重みの層数 {self.weights.depth} と木の深さ {self.chain.depth} が一致しません"
            )
        for t, w in enumerate(self.weights.matrices, start=1):
            if w.shape[1] != self.chain.width(t):
                raise ValueError(
                    f"層 {t}: W の列数 {w.shape[1]} と C の行数 {self.chain.width(t)} が一致しません"
                )
            if w.shape[0] != self.weights.dim:
                raise ValueError(f"層 {t}: 特徴次元が一致しません")
        if self.vocabulary is not None and self.vocabulary.dim != self.weights.dim:
            raise ValueError(
                f"語彙の次元 {self.vocabulary.dim} と重みの次元 {self.weights.dim} が一致しません"
            )

    @property
    def depth(self) -> int:
        return self.chain.depth

    @property
    def n_labels(self) -> int:
        return self.chain.n_labels

    @cached_property
    def row_major(self) -> list[sp.csr_matrix]:
        """W(t)^T を CSR で保持 (ノードごとの重みベクトルを行として取り出す)"""
        result = []
        for w in self.weights.matrices:
            wt = w.T.tocsr()
            wt.sort_indices()
            result.append(wt)
        return result

    def external_label(self, label: int) -> str:
        if self.label_ids is None:
            return str(label)
        return self.label_ids[label]


@dataclass
class Prediction:
    """上位 k ラベルと集約スコア (降順)"""
    label_ids: np.ndarray                 # 内部ラベルID
    scores: np.ndarray                    # 祖先スコアの積
    evaluations: int = 0                  # マージン計算回数 (計測用)

    def __len__(self) -> int:
        return len(self.label_ids)
