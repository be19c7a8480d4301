"""
階層ラベル木データモデル
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass
class ClusterChain:
    """
    クラスタ指示行列 C(1..D) の列

    parents[t-1][j] は層 t のノード j の親 (層 t-1) の ID。
    層 0 は根のみ (K_0 = 1)、層 D はラベルそのもの (K_D = L)。
    """
    parents: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """親IDの範囲と、すべての親が子を持つことを確認"""
        for t, parent in enumerate(self.parents, start=1):
            parent = np.asarray(parent)
            if len(parent) == 0:
                raise ValueError(f"層 {t} が空です")
            width = self.width(t - 1)
            if parent.min() < 0 or parent.max() >= width:
                raise ValueError(f"層 {t}: 親IDが範囲 [0, {width}) の外にあります")
            if np.bincount(parent, minlength=width).min() == 0:
                raise ValueError(f"層 {t}: 子を持たない親ノードがあります")

    @property
    def depth(self) -> int:
        return len(self.parents)

    @property
    def layer_widths(self) -> list[int]:
        """K_1..K_D"""
        return [len(p) for p in self.parents]

    @property
    def n_labels(self) -> int:
        return len(self.parents[-1]) if self.parents else 0

    def width(self, t: int) -> int:
        """K_t (t=0 は根)"""
        return 1 if t == 0 else len(self.parents[t - 1])

    def indicator(self, t: int) -> sp.csr_matrix:
        """C(t) ∈ {0,1}^{K_t × K_{t-1}}"""
        parent = self.parents[t - 1]
        rows = np.arange(len(parent))
        data = np.ones(len(parent), dtype=np.float64)
        return sp.csr_matrix((data, (rows, parent)), shape=(len(parent), self.width(t - 1)))

    @cached_property
    def children(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """層ごとの (indptr, indices): 親 k の子は indices[indptr[k]:indptr[k+1]] (昇順)"""
        result = []
        for t in range(1, self.depth + 1):
            parent = self.parents[t - 1]
            order = np.argsort(parent, kind="stable").astype(np.int32)
            counts = np.bincount(parent, minlength=self.width(t - 1))
            indptr = np.zeros(len(counts) + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            result.append((indptr, order))
        return result

    def cluster_sizes(self, t: int) -> np.ndarray:
        """層 t の各ノードに含まれるラベル数"""
        sizes = np.ones(self.n_labels, dtype=np.int64)
        node = np.arange(self.n_labels)
        for layer in range(self.depth, t, -1):
            node = self.parents[layer - 1][node]
        return np.bincount(node, weights=sizes, minlength=self.width(t)).astype(np.int64)

    def ancestors(self, label: int) -> list[int]:
        """ラベルから層1までの祖先ノードID (層 D..1 の順)"""
        path = [label]
        node = label
        for t in range(self.depth, 1, -1):
            node = int(self.parents[t - 1][node])
            path.append(node)
        return path
