"""設定スキーマ共通の Pydantic 基底クラス"""

from pydantic import BaseModel, ConfigDict


class FrozenModel(BaseModel):
    """未知のキーを拒否し、生成後は変更できない設定モデル"""
    model_config = ConfigDict(extra="forbid", frozen=True)
