"""
CLI ルーター統合
"""
import argparse
import logging

from src.cli.commands import build, data, evaluation, inference
from src.config import settings
from src.exceptions import TreeMatchError
from src.services.pipeline import Pipeline

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """全サブコマンドを登録したパーサーを作る"""
    parser = argparse.ArgumentParser(
        prog="treematch",
        description="木構造ラベル索引による意味的マッチング (学習・推論・評価)",
    )
    parser.add_argument("--threads", type=int, default=settings.threads, help="ワーカー数の上限")
    parser.add_argument("--debug", action="store_true", default=settings.debug, help="DEBUG ログを出力")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # 各コマンドを登録
    data.register(subparsers)
    build.register(subparsers)
    inference.register(subparsers)
    evaluation.register(subparsers)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    """ハンドラを実行し、例外を終了コードに変換する"""
    if args.threads < 1:
        logger.error("--threads は 1 以上である必要があります")
        return 2
    pipeline = Pipeline(threads=args.threads)
    try:
        args.handler(args, pipeline)
        return 0
    except TreeMatchError as e:
        logger.error(f"[{e.category}] {e.message}")
        return e.exit_code
    except Exception as e:
        logger.error(f"予期しないエラー: {e}", exc_info=True)
        return 1
