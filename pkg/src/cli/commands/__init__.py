"""サブコマンド"""
