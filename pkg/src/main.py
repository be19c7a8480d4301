"""
TreeMatch - CLI エントリポイント
木構造ラベル索引による意味的マッチングエンジン
"""
import logging
import sys
from typing import Optional

from src.cli.router import build_parser, dispatch
from src.config import settings

logger = logging.getLogger(__name__)


def setup_logging(debug: bool = False) -> None:
    """ログ設定"""
    logging.basicConfig(
        level=logging.DEBUG if debug or settings.debug else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


def main(argv: Optional[list[str]] = None) -> int:
    """コマンドラインを解析して実行し、終了コードを返す"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.debug)
    logger.debug(f"{settings.app_name}: {args.command} (threads={args.threads})")
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
