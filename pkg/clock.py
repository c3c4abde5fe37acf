"""
端末クロックのモデル

・オフセット : 同期誤差モデル (完全同期 / 切断正規分布) から端末ごとに独立に抽選
・ドリフト   : ppm 単位。測定した時間長にのみ効き、エポックには効かない
"""

import math
from dataclasses import dataclass
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import Field, model_validator
from scipy.stats import norm

from errors import ModelError
from schema import FrozenModel

DRIFT_LIMIT_PPM = 100.0
MIN_ACCEPTANCE = 1e-6


@dataclass(frozen=True)
class ClockState:
    offset_s: float = 0.0
    drift_ppm: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.offset_s):
            raise ModelError(f"クロックオフセットが有限値ではありません: {self.offset_s}")
        if not math.isfinite(self.drift_ppm) or abs(self.drift_ppm) > DRIFT_LIMIT_PPM:
            raise ModelError(f"ドリフト {self.drift_ppm} ppm が上限 ±{DRIFT_LIMIT_PPM} ppm を超えています")


# ===============================================
#  同期誤差モデル
# ===============================================
class PerfectSync(FrozenModel):
    kind: Literal["Perfect"] = "Perfect"


class TruncatedNormalSync(FrozenModel):
    kind: Literal["TruncatedNormal"] = "TruncatedNormal"
    mean_s: float = 0.0
    std_s: float = Field(ge=0)
    lower_s: float
    upper_s: float

    @model_validator(mode="after")
    def _check_interval(self):
        if not self.lower_s < self.upper_s:
            raise ValueError("lower_s < upper_s が必要です")
        if not self.lower_s <= self.mean_s <= self.upper_s:
            raise ValueError("lower_s <= mean_s <= upper_s が必要です")
        return self


SyncErrorModel = Annotated[Union[PerfectSync, TruncatedNormalSync], Field(discriminator="kind")]


# ===============================================
#  ドリフトモデル
# ===============================================
class FixedDrift(FrozenModel):
    kind: Literal["Fixed"] = "Fixed"
    ppm: float = Field(default=0.0, ge=-DRIFT_LIMIT_PPM, le=DRIFT_LIMIT_PPM)


class UniformSymmetricDrift(FrozenModel):
    kind: Literal["UniformSymmetric"] = "UniformSymmetric"
    max_abs_ppm: float = Field(ge=0, le=DRIFT_LIMIT_PPM)


DriftModel = Annotated[Union[FixedDrift, UniformSymmetricDrift], Field(discriminator="kind")]


def truncated_normal_acceptance(sync: TruncatedNormalSync) -> float:
    """親の正規分布のうち [lower_s, upper_s] に入る確率質量"""
    if sync.std_s == 0:
        return 1.0
    a = (sync.lower_s - sync.mean_s) / sync.std_s
    b = (sync.upper_s - sync.mean_s) / sync.std_s
    return float(norm.cdf(b) - norm.cdf(a))


def sample_sync_offsets(sync: TruncatedNormalSync, rng: np.random.Generator, size: int) -> np.ndarray:
    """切断正規から size 個を棄却サンプリングで引く。size=1 なら端末 1 台分と同じ乱数列"""
    if sync.std_s == 0:
        return np.full(size, sync.mean_s)
    acceptance = truncated_normal_acceptance(sync)
    if acceptance < MIN_ACCEPTANCE:
        raise ModelError(
            f"切断区間 [{sync.lower_s}, {sync.upper_s}] の確率質量 {acceptance:.3e} が小さすぎます"
        )
    # 受理率から一回で通る程度のバッチを引く
    batch = max(16, int(math.ceil(4.0 * size / acceptance)))
    chunks, filled = [], 0
    while filled < size:
        draws = rng.normal(sync.mean_s, sync.std_s, size=batch)
        ok = draws[(draws >= sync.lower_s) & (draws <= sync.upper_s)][: size - filled]
        chunks.append(ok)
        filled += ok.size
    return np.concatenate(chunks)


def _sample_truncated_normal(sync: TruncatedNormalSync, rng: np.random.Generator) -> float:
    return float(sample_sync_offsets(sync, rng, 1)[0])


def sample_clock(sync, drift, rng: np.random.Generator) -> ClockState:
    """
    端末 1 台分のクロック状態を抽選する。
    ドリフト用の一様乱数はモデルによらず必ず 1 個消費し、その後にオフセットを引く。
    """
    u = rng.uniform(-1.0, 1.0)
    if isinstance(drift, UniformSymmetricDrift):
        drift_ppm = float(u * drift.max_abs_ppm)
    else:
        drift_ppm = float(drift.ppm)

    if isinstance(sync, TruncatedNormalSync):
        offset_s = _sample_truncated_normal(sync, rng)
    else:
        offset_s = 0.0
    return ClockState(offset_s=offset_s, drift_ppm=drift_ppm)


def local_duration(true_duration_s: float, clock: ClockState) -> float:
    """真の時間長を端末の時計で測った値。オフセットは時間長に影響しない"""
    if true_duration_s < 0:
        raise ModelError(f"時間長は 0 以上が必要です: {true_duration_s}")
    return true_duration_s * (1.0 + clock.drift_ppm * 1e-6)
