"""
学習・特徴量化パラメータモデル
"""
import string
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field


class Activation(str, Enum):
    """ノードスコアの活性化関数"""
    SIGMOID = "sigmoid"
    L3_HINGE = "l3-hinge"


class LossType(str, Enum):
    """二値分類サブ問題の損失関数"""
    SQUARED_HINGE = "squared-hinge"
    LOGISTIC = "logistic"


class NegativeSampling(str, Enum):
    """負例サンプリング方式"""
    TFN = "tfn"      # Teacher Forcing Negatives
    FULL = "full"    # 全インスタンスを使う OVR


class LabelEmbedding(str, Enum):
    """ラベル表現の作り方"""
    PIFA = "pifa"    # 正例クエリ特徴の集約
    TEXT = "text"    # ラベルタイトルの TF-IDF


class VectorizerConfig(BaseModel):
    """n-gram TF-IDF 特徴量化の設定"""

    max_unigrams: int = Field(default=1_000_000, ge=0, description="単語unigramの語彙上限 (0で無効)")
    max_bigrams: int = Field(default=3_000_000, ge=0, description="単語bigramの語彙上限 (0で無効)")
    max_char_trigrams: int = Field(default=200_000, ge=0, description="文字trigramの語彙上限 (0で無効)")
    lowercase: bool = Field(default=True, description="小文字化")
    punctuation_set: str = Field(default=string.punctuation, description="空白に置き換える記号")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "max_unigrams": 1000000,
                "max_bigrams": 3000000,
                "max_char_trigrams": 200000,
                "lowercase": True,
            }
        }
    )


class TreeConfig(BaseModel):
    """階層ラベル木の設定"""

    branching_factor: int = Field(default=32, ge=2, description="分岐数 B")
    max_leaf: int = Field(default=100, ge=1, description="葉クラスタあたりの最大ラベル数")
    seed: int = Field(default=0, ge=0, description="乱数シード")
    kmeans_max_iters: int = Field(default=20, ge=1, description="k-means の最大反復回数")
    kmeans_tol: float = Field(default=1e-4, ge=0, description="目的関数改善量の許容値")


class TrainConfig(BaseModel):
    """階層 OVR 学習の設定"""

    lambda_: float = Field(default=1.0, gt=0, alias="lambda", description="L2 正則化係数")
    loss: LossType = Field(default=LossType.SQUARED_HINGE, description="損失関数")
    solver_max_iters: int = Field(default=100, ge=1, description="ソルバーの最大エポック数")
    solver_tol: float = Field(default=0.1, gt=0, description="相対射影勾配ノルムの停止閾値")
    neg_sampling: NegativeSampling = Field(default=NegativeSampling.TFN, description="負例サンプリング")
    prune_epsilon: float = Field(default=0.1, ge=0, description="重み枝刈り閾値 ε")
    threads: int = Field(default=1, ge=1, description="ワーカー数")
    seed: int = Field(default=0, ge=0, description="座標順序の乱数シード")

    model_config = ConfigDict(populate_by_name=True)
