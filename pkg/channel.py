"""
簡易チャネルモデル

対数距離パスロス + 指数型の LoS 確率 + NLoS 時の過剰遅延。
フェージングやドップラーは扱わない。
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Annotated, Literal, Union

import numpy as np
from pydantic import Field

from errors import GeometryError, ModelError
from schema import FrozenModel

if TYPE_CHECKING:
    from measurement import RadioConfig
    from scenario import Node

THERMAL_NOISE_DBM_HZ = -174.0


class ExponentialExcessDelay(FrozenModel):
    kind: Literal["Exponential"] = "Exponential"
    mean_s: float = Field(ge=0)


class FixedExcessDelay(FrozenModel):
    kind: Literal["Fixed"] = "Fixed"
    bias_s: float = Field(ge=0)


ExcessDelayModel = Annotated[Union[ExponentialExcessDelay, FixedExcessDelay], Field(discriminator="kind")]


class ChannelModel(FrozenModel):
    reference_loss_db: float
    pathloss_exponent: float = Field(ge=1.5)
    pathloss_exponent_nlos: float = Field(ge=1.5)
    shadowing_std_db: float = Field(ge=0)
    los_decay_m: float = Field(gt=0)
    nlos_excess_delay: ExcessDelayModel
    unresolved_multipath_factor: float = Field(default=0.0, ge=0)
    nlos_angle_scatter_prob: float = Field(default=1.0, ge=0, le=1)
    force_los: bool = False


@dataclass(frozen=True)
class LinkState:
    los: bool
    snr_db: float
    excess_delay_s: float = 0.0

    def __post_init__(self):
        if self.excess_delay_s < 0:
            raise ModelError(f"過剰遅延が負です: {self.excess_delay_s}")
        if self.los and self.excess_delay_s != 0:
            raise ModelError("LoS リンクに過剰遅延は付けられません")

    @property
    def snr_linear(self) -> float:
        return 10 ** (self.snr_db / 10)


def los_probability(distance_m: float, model: ChannelModel, clutter_density: float = 0.0) -> float:
    """exp(-d / L)。屋内の遮蔽物密度が高いほど L を短くする"""
    if distance_m <= 0:
        raise GeometryError(f"距離は正である必要があります: {distance_m}")
    decay = model.los_decay_m
    if clutter_density > 0:
        decay = max(1.0, decay * (1.0 - clutter_density))
    return math.exp(-distance_m / decay)


def noise_floor_dbm(radio: "RadioConfig") -> float:
    return THERMAL_NOISE_DBM_HZ + 10 * math.log10(radio.bandwidth_hz) + radio.noise_figure_db


def path_loss_db(distance_m: float, los: bool, model: ChannelModel) -> float:
    exponent = model.pathloss_exponent if los else model.pathloss_exponent_nlos
    return model.reference_loss_db + 10 * exponent * math.log10(distance_m)


def snr_db(
    tx_power_dbm: float,
    distance_m: float,
    los: bool,
    radio: "RadioConfig",
    model: ChannelModel,
    rng: np.random.Generator | None = None,
    shadowing_db: float | None = None,
) -> float:
    """
    受信 SNR [dB]。shadowing_db を渡せばその値、rng を渡せばその場で抽選、
    どちらも無ければシャドウイング 0 として計算する
    """
    if distance_m <= 0:
        raise GeometryError(f"距離は正である必要があります: {distance_m}")
    if shadowing_db is None:
        shadowing_db = float(rng.normal(0.0, model.shadowing_std_db)) if rng is not None else 0.0
    return tx_power_dbm - (path_loss_db(distance_m, los, model) + shadowing_db) - noise_floor_dbm(radio)


def draw_link(
    tx: "Node",
    rx: "Node",
    model: ChannelModel,
    radio: "RadioConfig",
    rng: np.random.Generator,
    clutter_density: float = 0.0,
) -> LinkState:
    """
    1 リンク分の状態を抽選する。
    一様乱数・標準正規・標準指数を毎回この順で 1 個ずつ消費する (結果が LoS でも同じ)
    """
    if tx.id == rx.id:
        raise GeometryError(f"同一ノード {tx.id} 間のリンクは作れません")
    d = tx.position.distance_to(rx.position)
    if d < 1e-9:
        raise GeometryError(f"ノード {tx.id} と {rx.id} の位置が一致しています")

    u = rng.uniform()
    z = rng.standard_normal()
    e = rng.standard_exponential()

    los = model.force_los or u < los_probability(d, model, clutter_density)
    if los:
        excess = 0.0
    elif isinstance(model.nlos_excess_delay, ExponentialExcessDelay):
        excess = float(e * model.nlos_excess_delay.mean_s)
    else:
        excess = float(model.nlos_excess_delay.bias_s)

    snr = snr_db(radio.tx_power_dbm, d, los, radio, model, shadowing_db=float(z * model.shadowing_std_db))
    return LinkState(los=bool(los), snr_db=snr, excess_delay_s=excess)
