"""
評価コマンド (evaluate / bench)
"""
import argparse
import logging

from src.config import settings
from src.exceptions import ConfigError
from src.services.pipeline import Pipeline

logger = logging.getLogger(__name__)


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def _float_list(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v.strip()]


def register(subparsers) -> None:
    evaluate = subparsers.add_parser("evaluate", help="Recall@{10,50,100} を計算する")
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", default=None, help="モデルディレクトリ")
    source.add_argument("--predictions", default=None, help="predict の出力 TSV")
    evaluate.add_argument("test", help="評価データ (query<TAB>カンマ区切りラベルID)")
    evaluate.add_argument("--out", default=str(settings.work_dir_abs_path / "eval"), help="レポート出力先")
    evaluate.add_argument("--beam", type=int, default=None, help="ビーム幅")
    evaluate.add_argument("--topk", type=int, default=None, help="出力ラベル数 (省略時はモデル既定値)")
    evaluate.add_argument("--labels", default=None, help="BM25 用のラベルカタログ")
    evaluate.add_argument("--bm25", action="store_true", help="BM25 ベースラインも評価する")
    evaluate.set_defaults(handler=handle_evaluate)

    bench = subparsers.add_parser("bench", help="単一スレッドのレイテンシを計測する")
    bench.add_argument("model_dir", help="モデルディレクトリ")
    bench.add_argument("queries", help="計測クエリ (--beams/--epsilons 指定時は評価 TSV)")
    bench.add_argument("--out", default=str(settings.work_dir_abs_path / "bench"), help="レポート出力先")
    bench.add_argument("--beam", type=int, default=None, help="ビーム幅")
    bench.add_argument("--topk", type=int, default=None, help="出力ラベル数 (省略時はモデル既定値)")
    bench.add_argument("--warmup", type=int, default=10, help="計測前に捨てるクエリ数")
    bench.add_argument("--repetitions", type=int, default=1, help="繰り返し回数")
    bench.add_argument("--beams", type=_int_list, default=None, help="ビーム幅の掃引 (例: 1,5,10,50)")
    bench.add_argument("--epsilons", type=_float_list, default=None, help="枝刈り閾値の掃引 (例: 0.1,0.2)")
    bench.set_defaults(handler=handle_bench)


def handle_evaluate(args: argparse.Namespace, pipeline: Pipeline) -> None:
    if args.predictions:
        if args.bm25:
            raise ConfigError("--bm25 は --model と併用してください", fields=["bm25"])
        report = pipeline.evaluate_predictions_file(args.predictions, args.test, args.out)
    else:
        report = pipeline.run_eval(
            args.model, args.test, args.out,
            beam=args.beam, k=args.topk,
            label_catalog_path=args.labels, with_bm25=args.bm25,
        )
    for k, value in report.recall_at.items():
        print(f"recall@{k}\t{value:.4f}")


def handle_bench(args: argparse.Namespace, pipeline: Pipeline) -> None:
    report = pipeline.run_bench(
        args.model_dir, args.queries, args.out,
        beam=args.beam, k=args.topk,
        warmup=args.warmup, repetitions=args.repetitions,
        beams=args.beams, epsilons=args.epsilons,
    )
    logger.info(f"計測レポートを書き出しました: {args.out}")
    if hasattr(report, "latency_ms_median") and report.latency_ms_median is not None:
        print(f"median_ms\t{report.latency_ms_median:.4f}")
        print(f"throughput_qps\t{report.throughput_qps:.1f}")
