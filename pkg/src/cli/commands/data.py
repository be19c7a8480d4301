"""
データ準備コマンド (ingest / synth-data)
"""
import argparse
import logging
from pathlib import Path

from src.models.params import Activation
from src.models.pipeline_config import PipelineConfig
from src.config import settings
from src.services import synthetic
from src.services.model_store import dump_json
from src.services.pipeline import Pipeline

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    ingest = subparsers.add_parser("ingest", help="クエリ-ラベル対 TSV を取り込む")
    ingest.add_argument("pairs", help="query<TAB>label[<TAB>count[<TAB>time]] の TSV")
    ingest.add_argument("--out", default=str(settings.work_dir_abs_path / "ingest"), help="出力ディレクトリ")
    ingest.add_argument("--threshold", type=float, default=1, help="正例とするカウントの下限")
    ingest.add_argument("--labels", default=None, help="label<TAB>title のカタログ")
    ingest.add_argument("--split", choices=["random", "column"], default=None, help="学習/評価の分割方法")
    ingest.add_argument("--test-fraction", type=float, default=0.2, help="評価に回す割合")
    ingest.add_argument("--seed", type=int, default=0, help="ランダム分割のシード")
    ingest.set_defaults(handler=handle_ingest)

    synth = subparsers.add_parser("synth-data", help="合成データセットを生成する")
    synth.add_argument("--out", default=str(settings.work_dir_abs_path / "synthetic"), help="出力ディレクトリ")
    synth.add_argument("--queries", type=int, default=20_000, help="クエリ総数")
    synth.add_argument("--labels", type=int, default=5_000, help="ラベル数")
    synth.add_argument("--synonym-fraction", type=float, default=0.5, help="全語を同義語に置換する評価クエリの割合")
    synth.add_argument("--test-fraction", type=float, default=0.2, help="評価に回すクエリの割合")
    synth.add_argument("--seed", type=int, default=0, help="乱数シード")
    synth.set_defaults(handler=handle_synth)


def handle_ingest(args: argparse.Namespace, pipeline: Pipeline) -> None:
    outputs = pipeline.ingest(
        args.pairs,
        args.out,
        threshold=args.threshold,
        label_catalog_path=args.labels,
        split=args.split,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    for name, path in outputs.items():
        print(f"{name}\t{path}")


def synthetic_config(paths: dict[str, Path], seed: int = 0) -> PipelineConfig:
    """合成データ用のパイプライン設定"""
    return PipelineConfig(
        train_path=str(paths["train"]),
        label_catalog_path=str(paths["labels"]),
        test_path=str(paths["test"]),
        model_dir=str(paths["train"].parent / "model"),
        seed=seed,
        activation=Activation.SIGMOID,
        tree={"branching_factor": 8, "max_leaf": 20},
    )


def handle_synth(args: argparse.Namespace, pipeline: Pipeline) -> None:
    data = synthetic.generate(
        n_queries=args.queries,
        n_labels=args.labels,
        test_synonym_fraction=args.synonym_fraction,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    paths = data.write(args.out)
    config = synthetic_config(paths, args.seed)
    config_path = Path(args.out) / "config.json"
    config_path.write_text(
        dump_json(config.model_dump(mode="json", by_alias=True)), encoding="utf-8"
    )
    logger.info(f"合成データを書き出しました: {args.out}")
    for name, path in {**paths, "config": config_path}.items():
        print(f"{name}\t{path}")
