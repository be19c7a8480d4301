"""
アプリケーション設定管理
"""
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field
from functools import lru_cache
from pathlib import Path


class Settings(BaseSettings):
    """アプリケーション設定"""

    # アプリケーション設定
    app_name: str = Field(default="TreeMatch", description="アプリケーション名")
    debug: bool = Field(default=False, description="デバッグモード")

    # 並列化設定
    threads: int = Field(default=1, ge=1, description="ワーカー数の上限")

    # 推論設定
    default_beam: int = Field(default=10, ge=1, description="既定のビーム幅")
    default_topk: int = Field(default=100, ge=1, description="既定の出力ラベル数")
    activation: str = Field(default="l3-hinge", description="既定の活性化関数")

    # 作業ディレクトリ設定
    work_dir: str = Field(default="work", description="作業ディレクトリのパス")

    @property
    def work_dir_abs_path(self) -> Path:
        """作業ディレクトリの絶対パスを取得"""
        return Path(self.work_dir).resolve()

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


@lru_cache()
def get_settings() -> Settings:
    """設定のシングルトンインスタンスを取得"""
    return Settings()


settings = get_settings()
