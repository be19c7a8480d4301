"""
TreeMatch - 木構造ラベル索引による意味的マッチングエンジン
"""
__version__ = "1.0.0"
