"""
TreeMatch コマンドライン起動スクリプト
使用方法: py -3.13 run.py <サブコマンド> [オプション]
"""
import sys

from src.main import main

if __name__ == "__main__":
    sys.exit(main())
