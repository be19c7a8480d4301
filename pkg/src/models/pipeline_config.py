"""
パイプライン設定モデル
"""
import json
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.config import settings
from src.exceptions import ConfigError
from src.models.params import (
    Activation,
    LabelEmbedding,
    TrainConfig,
    TreeConfig,
    VectorizerConfig,
)


class InputFormat(str, Enum):
    """学習データの入力形式"""
    PAIRS = "pairs"          # query<TAB>label[<TAB>count[<TAB>time]]
    SVMLIGHT = "svmlight"    # 特徴量化済み (マルチラベル)
    NPZ = "npz"              # scipy CSR (X, Y)


class PipelineConfig(BaseModel):
    """学習・評価パイプラインの宣言的設定 (JSON)"""

    # 入力
    input_format: InputFormat = Field(default=InputFormat.PAIRS, description="学習データの形式")
    train_path: str = Field(..., description="学習データ (pairs TSV / SVMLight / X.npz)")
    train_labels_path: Optional[str] = Field(default=None, description="npz 形式の Y")
    label_catalog_path: Optional[str] = Field(default=None, description="label<TAB>title のカタログ")
    test_path: Optional[str] = Field(default=None, description="評価データ")
    count_threshold: float = Field(default=1, ge=0, description="正例とするカウントの下限")

    # 出力
    model_dir: str = Field(default="work/model", description="モデルディレクトリ")

    # アルゴリズム
    label_embedding: LabelEmbedding = Field(default=LabelEmbedding.PIFA, description="ラベル表現")
    activation: Activation = Field(default_factory=lambda: Activation(settings.activation), description="活性化関数")
    beam: int = Field(default=settings.default_beam, ge=1, description="ビーム幅")
    topk: int = Field(default=settings.default_topk, ge=1, description="出力ラベル数")
    seed: int = Field(default=0, ge=0, description="全体の乱数シード (木・学習・分割に適用)")
    threads: int = Field(default=settings.threads, ge=1, description="ワーカー数 (出力には影響しない)")

    vectorizer: VectorizerConfig = Field(default_factory=VectorizerConfig)
    tree: TreeConfig = Field(default_factory=TreeConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    @model_validator(mode="after")
    def _check_inputs(self) -> "PipelineConfig":
        if self.input_format == InputFormat.NPZ and not self.train_labels_path:
            raise ValueError("npz 形式では train_labels_path が必要です")
        if self.label_embedding == LabelEmbedding.TEXT:
            if self.input_format != InputFormat.PAIRS or not self.label_catalog_path:
                raise ValueError("label_embedding=text には pairs 形式と label_catalog_path が必要です")
        return self

    @property
    def uses_text(self) -> bool:
        return self.input_format == InputFormat.PAIRS

    def effective_tree(self) -> TreeConfig:
        return self.tree.model_copy(update={"seed": self.seed})

    def effective_train(self, threads: Optional[int] = None) -> TrainConfig:
        return self.train.model_copy(update={"seed": self.seed, "threads": threads or self.threads})

    def echo(self) -> dict:
        """
        モデルディレクトリに書き出す実効設定

        ワーカー数と出力先は含めない (スレッド数で出力が変わらないため)
        """
        data = self.model_dump(mode="json", by_alias=True, exclude={"threads", "model_dir"})
        data["tree"]["seed"] = self.seed
        data["train"]["seed"] = self.seed
        data["train"].pop("threads", None)
        return data


def _field_names(error: ValidationError) -> list[str]:
    names = []
    for item in error.errors():
        name = ".".join(str(part) for part in item["loc"]) or "(root)"
        names.append(f"{name}: {item['msg']}")
    return names


def parse_config(data: dict) -> PipelineConfig:
    """辞書から設定を検証する (違反した全フィールドを列挙)"""
    try:
        return PipelineConfig(**data)
    except ValidationError as e:
        fields = _field_names(e)
        raise ConfigError("設定の検証エラー:\n  " + "\n  ".join(fields), fields=fields)


def load_config(path: Union[str, Path]) -> PipelineConfig:
    """JSON 設定ファイルを読み込む"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"設定ファイルが存在しません: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"設定ファイルの JSON パースエラー: {e}")
    if not isinstance(data, dict):
        raise ConfigError("設定ファイルは JSON オブジェクトである必要があります")
    return parse_config(data)
