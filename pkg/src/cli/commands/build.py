"""
モデル構築コマンド (fit-vectorizer / build-tree / train / prune)
"""
import argparse
import logging

from src.models.pipeline_config import load_config
from src.config import settings
from src.services.pipeline import Pipeline

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    fit = subparsers.add_parser("fit-vectorizer", help="n-gram 語彙を構築する")
    fit.add_argument("--config", required=True, help="パイプライン設定 (JSON)")
    fit.add_argument("--out", default=str(settings.work_dir_abs_path / "vocabulary.txt"), help="語彙ファイル")
    fit.set_defaults(handler=handle_fit_vectorizer)

    tree = subparsers.add_parser("build-tree", help="階層ラベル木を構築する")
    tree.add_argument("--config", required=True, help="パイプライン設定 (JSON)")
    tree.add_argument("--vocabulary", default=None, help="構築済み語彙")
    tree.add_argument("--out", default=str(settings.work_dir_abs_path / "chain"), help="出力ディレクトリ")
    tree.set_defaults(handler=handle_build_tree)

    train = subparsers.add_parser("train", help="階層 OVR モデルを学習する")
    train.add_argument("--config", required=True, help="パイプライン設定 (JSON)")
    train.add_argument("--vocabulary", default=None, help="構築済み語彙")
    train.add_argument("--chain", default=None, help="構築済みラベル木")
    train.add_argument("--model-dir", default=None, help="出力先 (設定の model_dir を上書き)")
    train.set_defaults(handler=handle_train)

    prune = subparsers.add_parser("prune", help="重みをハード閾値で疎化する")
    prune.add_argument("model_dir", help="元のモデルディレクトリ")
    prune.add_argument("--epsilon", type=float, required=True, help="閾値 ε (|w| > ε のみ保持)")
    prune.add_argument("--out", required=True, help="出力ディレクトリ")
    prune.set_defaults(handler=handle_prune)


def handle_fit_vectorizer(args: argparse.Namespace, pipeline: Pipeline) -> None:
    config = load_config(args.config)
    vocab = pipeline.fit_vectorizer(config, args.out)
    print(f"vocabulary\t{args.out}\t{vocab.dim}")


def handle_build_tree(args: argparse.Namespace, pipeline: Pipeline) -> None:
    config = load_config(args.config)
    chain = pipeline.build_tree_only(config, args.out, args.vocabulary)
    print(f"chain\t{args.out}\t{','.join(str(w) for w in chain.layer_widths)}")


def handle_train(args: argparse.Namespace, pipeline: Pipeline) -> None:
    config = load_config(args.config)
    if args.model_dir:
        config = config.model_copy(update={"model_dir": args.model_dir})
    path = pipeline.run_train(config, args.vocabulary, args.chain)
    print(f"model\t{path}")


def handle_prune(args: argparse.Namespace, pipeline: Pipeline) -> None:
    path = pipeline.run_prune(args.model_dir, args.epsilon, args.out)
    print(f"model\t{path}")
