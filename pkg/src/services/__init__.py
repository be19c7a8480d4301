"""ビジネスロジックサービス"""
