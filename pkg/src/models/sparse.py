"""
疎ベクトルデータモデル
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SparseVector:
    """疎ベクトル (クエリ特徴 x ∈ R^d)"""
    dim: int                 # 次元数 d
    indices: np.ndarray      # 昇順の特徴ID (int32)
    values: np.ndarray       # 重み (float64)

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices と values の長さが一致しません")
        if len(self.indices) > 0:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices は狭義単調増加である必要があります")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("indices が次元の範囲外です")
            if np.any(self.values == 0):
                raise ValueError("ゼロ値を保持することはできません")

    @classmethod
    def empty(cls, dim: int) -> "SparseVector":
        return cls(dim, np.zeros(0, dtype=np.int32), np.zeros(0, dtype=np.float64))

    @classmethod
    def from_csr_row(cls, row: sp.csr_matrix) -> "SparseVector":
        """1行の CSR 行列から生成"""
        row = row.tocsr()
        row.sum_duplicates()
        row.eliminate_zeros()
        row.sort_indices()
        return cls(
            row.shape[1],
            row.indices.astype(np.int32, copy=True),
            row.data.astype(np.float64, copy=True),
        )

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def to_csr(self) -> sp.csr_matrix:
        """1×d の CSR 行列に変換"""
        indptr = np.array([0, self.nnz], dtype=np.int32)
        return sp.csr_matrix((self.values, self.indices, indptr), shape=(1, self.dim))

    def to_bytes(self) -> bytes:
        """決定性チェック用のバイト列"""
        return (
            np.int64(self.dim).tobytes()
            + self.indices.astype(np.int32).tobytes()
            + self.values.astype(np.float64).tobytes()
        )
