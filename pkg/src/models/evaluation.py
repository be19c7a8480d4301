"""
評価結果データモデル
"""
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class RecallSummary:
    """Recall@k のクエリ平均"""
    recall_at: dict[int, float] = field(default_factory=dict)
    n_queries: int = 0            # 集計対象のクエリ数
    n_excluded: int = 0           # 正解が空で除外したクエリ数


@dataclass
class LatencyStats:
    """単一スレッド・1クエリずつの計測結果"""
    median_ms: float
    p99_ms: float
    throughput_qps: float
    n_measured: int

    def to_dict(self) -> dict:
        return {
            "median_ms": self.median_ms,
            "p99_ms": self.p99_ms,
            "throughput_qps": self.throughput_qps,
            "n_measured": self.n_measured,
        }


@dataclass
class ColdStartStats:
    """学習時に正例のなかったラベルの集計"""
    n_test_labels: int = 0
    n_unseen_labels: int = 0
    n_test_pairs: int = 0
    n_unseen_pairs: int = 0

    @property
    def unseen_pair_ratio(self) -> float:
        return self.n_unseen_pairs / self.n_test_pairs if self.n_test_pairs else 0.0

    def to_dict(self) -> dict:
        return {
            "n_test_labels": self.n_test_labels,
            "n_unseen_labels": self.n_unseen_labels,
            "n_test_pairs": self.n_test_pairs,
            "n_unseen_pairs": self.n_unseen_pairs,
            "unseen_pair_ratio": self.unseen_pair_ratio,
        }


@dataclass
class BeamSweepRow:
    """ビーム幅ごとの精度と速度"""
    beam: int
    recall_at: dict[int, float]
    latency: LatencyStats

    def to_dict(self) -> dict:
        return {
            "beam": self.beam,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            **self.latency.to_dict(),
        }


@dataclass
class PruneSweepRow:
    """枝刈り閾値ごとの精度・モデルサイズ・速度"""
    epsilon: float
    recall_at: dict[int, float]
    nnz: int
    size_bytes: int
    latency: Optional[LatencyStats] = None

    def to_dict(self) -> dict:
        result = {
            "epsilon": self.epsilon,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "nnz": self.nnz,
            "size_bytes": self.size_bytes,
        }
        if self.latency is not None:
            result.update(self.latency.to_dict())
        return result
