"""
TreeMatch 例外定義

CLI はこれらの例外を exit_code に変換して終了する
"""
from typing import Optional


class TreeMatchError(Exception):
    """TreeMatch の基底例外"""

    exit_code: int = 1
    category: str = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(TreeMatchError):
    """設定値の検証エラー"""

    exit_code = 2
    category = "config"

    def __init__(self, message: str, fields: Optional[list[str]] = None):
        super().__init__(message)
        self.fields = fields or []


class DataFormatError(TreeMatchError):
    """入力データの形式エラー"""

    exit_code = 3
    category = "data"

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"{message} (行 {line_number})"
        super().__init__(message)
        self.line_number = line_number


class ModelFormatError(TreeMatchError):
    """モデルディレクトリ・バージョン形式のエラー"""

    exit_code = 4
    category = "model"


class VocabularyError(TreeMatchError):
    """語彙が構築できない"""

    exit_code = 5
    category = "vocabulary"


class ShapeMismatchError(TreeMatchError):
    """行列の次元不一致"""

    exit_code = 6
    category = "shape"


class TreeBuildError(TreeMatchError):
    """ラベル木の構築エラー"""

    exit_code = 7
    category = "tree"
