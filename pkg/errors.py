"""
サイドリンク測位シミュレータの例外クラス

どの例外も SlposError を継承する。CLI はこの階層で終了コードを決める
(UsageError / ConfigurationError / CapabilityError → 2, それ以外 → 1)。
"""


class SlposError(Exception):
    """本パッケージ共通の基底例外"""


class ConfigurationError(SlposError):
    """設定値が不正、または要求された構成が実現できない"""


class GeometryError(SlposError):
    """アンカー配置が退化している (共線・共面・平行な方位線など)"""


class SelectionError(SlposError):
    """アンカー候補が足りない"""


class ModelError(SlposError):
    """クロック・チャネルモデルのパラメータが数値的に成立しない"""


class CapabilityError(SlposError):
    """端末能力 (アンテナ数など) が測定方式を満たさない"""


class ProtocolError(SlposError):
    """現在の状態で受理できないイベント"""

    def __init__(self, state, event):
        self.state = state
        self.event = event
        super().__init__(f"イベント {event} は状態 {state} では受理できません")


class SessionStateError(SlposError):
    """完了していないセッションに対する問い合わせ"""


class UsageError(SlposError):
    """呼び出し方の誤り (空の入力、必要な集計が無いなど)"""
