"""
評価レポートモデル (JSON とテキストの書き出し)
"""
import json
from pathlib import Path
from typing import Optional, Union

from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, Field

from src.models.evaluation import ColdStartStats, LatencyStats, RecallSummary

TEMPLATES_PATH = Path(__file__).resolve().parents[1] / "templates"


class EvalReport(BaseModel):
    """評価結果"""
    method: str = Field(..., description="評価した手法 (tree / bm25)")
    recall_at: dict[str, float] = Field(default={}, description="k → Recall@k")
    n_queries: int = Field(default=0, description="集計対象のクエリ数")
    n_excluded: int = Field(default=0, description="正解が空で除外したクエリ数")
    latency_ms_median: Optional[float] = Field(default=None, description="レイテンシ中央値 (ms/q)")
    latency_ms_p99: Optional[float] = Field(default=None, description="レイテンシ p99 (ms/q)")
    throughput_qps: Optional[float] = Field(default=None, description="スループット (q/s)")
    cold_start: Optional[dict] = Field(default=None, description="コールドスタートラベルの集計")
    config: dict = Field(default={}, description="実効設定")

    @classmethod
    def build(
        cls,
        method: str,
        summary: RecallSummary,
        latency: Optional[LatencyStats] = None,
        cold_start: Optional[ColdStartStats] = None,
        config: Optional[dict] = None
    ) -> "EvalReport":
        return cls(
            method=method,
            recall_at={str(k): v for k, v in sorted(summary.recall_at.items())},
            n_queries=summary.n_queries,
            n_excluded=summary.n_excluded,
            latency_ms_median=latency.median_ms if latency else None,
            latency_ms_p99=latency.p99_ms if latency else None,
            throughput_qps=latency.throughput_qps if latency else None,
            cold_start=cold_start.to_dict() if cold_start else None,
            config=config or {},
        )


class SweepReport(BaseModel):
    """ビーム幅・枝刈り閾値のトレードオフ計測結果"""
    kind: str = Field(..., description="beam / prune")
    rows: list[dict] = Field(default=[], description="計測行")
    config: dict = Field(default={}, description="実効設定")


def render_text(template_name: str, **context) -> str:
    """jinja2 テンプレートでテキストレポートを生成"""
    env = Environment(
        loader=FileSystemLoader(str(TEMPLATES_PATH)),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    return env.get_template(template_name).render(**context)


def write_report(report: Union[EvalReport, SweepReport], directory: Union[str, Path], stem: str = "report") -> dict[str, Path]:
    """{stem}.json と {stem}.txt を書き出す"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = report.model_dump(mode="json")
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    template = "eval_report.txt.j2" if isinstance(report, EvalReport) else "sweep_report.txt.j2"
    text_path = directory / f"{stem}.txt"
    text_path.write_text(render_text(template, report=data), encoding="utf-8")
    return {"json": json_path, "text": text_path}
