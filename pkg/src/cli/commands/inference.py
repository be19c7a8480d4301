"""
推論コマンド (predict)
"""
import argparse

from src.models.params import Activation
from src.services.pipeline import Pipeline


def register(subparsers) -> None:
    predict = subparsers.add_parser("predict", help="ビームサーチで上位 k ラベルを予測する")
    predict.add_argument("model_dir", help="モデルディレクトリ")
    predict.add_argument("queries", help="1行1クエリ (語彙なしモデルは SVMLight)")
    predict.add_argument("--out", required=True, help="予測 TSV")
    predict.add_argument("--beam", type=int, default=None, help="ビーム幅 (省略時はモデル既定値)")
    predict.add_argument("--topk", type=int, default=None, help="出力ラベル数 (省略時はモデル既定値)")
    predict.add_argument(
        "--activation",
        choices=[a.value for a in Activation],
        default=None,
        help="活性化関数の上書き",
    )
    predict.set_defaults(handler=handle_predict)


def handle_predict(args: argparse.Namespace, pipeline: Pipeline) -> None:
    activation = Activation(args.activation) if args.activation else None
    path = pipeline.run_predict(args.model_dir, args.queries, args.out, args.beam, args.topk, activation)
    print(f"predictions\t{path}")
