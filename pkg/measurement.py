"""
測定値の合成 (ToA / RTT / TDoA / AoA)

雑音は CRLB 型の式で統計的に与え、波形レベルの相関処理は行わない。
時間はすべて秒、距離はメートル。
方位角は東を 0、反時計回りを正とする。
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import Field

from channel import ChannelModel, LinkState
from clock import local_duration
from errors import CapabilityError, ConfigurationError, ModelError
from scenario import Node
from schema import FrozenModel

SPEED_OF_LIGHT = 299_792_458.0
AOA_STD_CAP_RAD = math.pi / 4


class RadioConfig(FrozenModel):
    bandwidth_hz: float = Field(gt=0)
    carrier_hz: float = Field(default=5.9e9, gt=0)
    tx_power_dbm: float = 23.0
    noise_figure_db: float = 9.0
    n_antennas: int = Field(default=1, ge=1)
    antenna_spacing_wavelengths: float = Field(default=0.5, gt=0)
    array_axis_rad: float = math.pi / 2  # 進行方向から測ったアレイ軸の向き
    planar_array: bool = False  # True なら天頂角も測れる


class RttKind(str, Enum):
    SINGLE_SIDED = "SingleSided"
    DOUBLE_SIDED = "DoubleSided"


# ===============================================
#  測定値の型
# ===============================================
@dataclass(frozen=True)
class ToaMeasurement:
    tx_id: int
    rx_id: int
    toa_s: float
    snr_db: float
    los: bool
    std_s: float = 0.0


@dataclass(frozen=True)
class RttMeasurement:
    a_id: int
    b_id: int
    kind: RttKind
    est_range_m: float
    reply_times_s: tuple[float, ...]
    snr_db: float = 0.0
    los: bool = True
    true_range_m: float = float("nan")

    def __post_init__(self):
        if not math.isfinite(self.est_range_m):
            raise ModelError(f"RTT 推定距離が有限値ではありません ({self.a_id}-{self.b_id})")
        if any(t <= 0 for t in self.reply_times_s):
            raise ModelError("応答時間は正である必要があります")


@dataclass(frozen=True)
class TdoaDiff:
    anchor_id: int
    diff_m: float


@dataclass(frozen=True)
class TdoaSet:
    target_id: int
    ref_anchor_id: int
    diffs: tuple[TdoaDiff, ...]
    toas: tuple[ToaMeasurement, ...] = ()

    def __post_init__(self):
        if any(d.anchor_id == self.ref_anchor_id for d in self.diffs):
            raise ConfigurationError("基準アンカーは差分に含められません")


@dataclass(frozen=True)
class AoaMeasurement:
    observer_id: int
    source_id: int
    azimuth_rad: float
    zenith_rad: float
    std_rad: float
    snr_db: float = 0.0
    los: bool = True
    low_quality: bool = False

    def __post_init__(self):
        if not -math.pi <= self.azimuth_rad < math.pi:
            raise ModelError(f"方位角が [-pi, pi) の範囲外です: {self.azimuth_rad}")
        if not 0.0 <= self.zenith_rad <= math.pi:
            raise ModelError(f"天頂角が [0, pi] の範囲外です: {self.zenith_rad}")


# ===============================================
#  雑音レベル
# ===============================================
def toa_std_s(bandwidth_hz: float, snr_linear: float) -> float:
    """平坦スペクトルの RMS 帯域 B/sqrt(12) を使った遅延推定の CRLB"""
    if bandwidth_hz <= 0 or snr_linear <= 0:
        raise ModelError(f"帯域と SNR は正である必要があります (B={bandwidth_hz}, snr={snr_linear})")
    beta = bandwidth_hz / math.sqrt(12.0)
    return 1.0 / (2.0 * math.sqrt(2.0) * math.pi * beta * math.sqrt(snr_linear))


def toa_noise_std_s(radio: RadioConfig, model: ChannelModel | None, snr_db: float) -> float:
    """CRLB に分解できないマルチパス分 (factor / B) を合成した ToA 雑音の標準偏差"""
    crlb = toa_std_s(radio.bandwidth_hz, 10 ** (snr_db / 10))
    factor = model.unresolved_multipath_factor if model is not None else 0.0
    return math.hypot(crlb, factor / radio.bandwidth_hz)


def aoa_std_rad(radio: RadioConfig, snr_linear: float, broadside_cos2: float) -> tuple[float, bool]:
    """
    一様線形アレイの CRLB。端射方向に近く上限 pi/4 に達した場合は
    (pi/4, True) を返す
    """
    n = radio.n_antennas
    if n < 2:
        raise CapabilityError(f"AoA 測定には 2 素子以上が必要です (n_antennas={n})")
    denom = (2 * math.pi * radio.antenna_spacing_wavelengths) ** 2 * snr_linear * n * (n * n - 1) * broadside_cos2
    if denom <= 0:
        return AOA_STD_CAP_RAD, True
    sigma = math.sqrt(6.0 / denom)
    if sigma >= AOA_STD_CAP_RAD:
        return AOA_STD_CAP_RAD, True
    return sigma, False


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


# ===============================================
#  測定の合成
# ===============================================
def measure_toa(
    tx: Node,
    rx: Node,
    link: LinkState,
    rng: np.random.Generator,
    radio: RadioConfig,
    model: ChannelModel | None = None,
    noise: bool = True,
) -> ToaMeasurement:
    """受信側の時計で見た到来時刻。正規乱数は noise の有無にかかわらず 1 個消費する"""
    d = tx.position.distance_to(rx.position)
    std = toa_noise_std_s(radio, model, link.snr_db)
    z = rng.standard_normal()
    toa = (
        d / SPEED_OF_LIGHT
        + (rx.clock.offset_s - tx.clock.offset_s)
        + link.excess_delay_s
        + (z * std if noise else 0.0)
    )
    return ToaMeasurement(tx.id, rx.id, toa, link.snr_db, link.los, std)


def one_way_range_m(toa: ToaMeasurement) -> float:
    return SPEED_OF_LIGHT * toa.toa_s


def _rx_errors(n: int, std: float, rng: np.random.Generator, noise: bool) -> np.ndarray:
    z = rng.standard_normal(n)
    return z * std if noise else np.zeros(n)


def rtt_single(
    a: Node,
    b: Node,
    t_reply_s: float,
    link: LinkState,
    rng: np.random.Generator,
    radio: RadioConfig,
    model: ChannelModel | None = None,
    noise: bool = True,
) -> RttMeasurement:
    """
    片側 RTT。a が往復時間を自分の時計で測り、b が応答時間を自分の時計で報告する。
    受信タイミング誤差は b の受信と a の受信の 2 回
    """
    if t_reply_s <= 0:
        raise ConfigurationError(f"応答時間は正である必要があります: {t_reply_s}")
    d = a.position.distance_to(b.position)
    tof = d / SPEED_OF_LIGHT + link.excess_delay_s
    n_b, n_a = _rx_errors(2, toa_noise_std_s(radio, model, link.snr_db), rng, noise)

    t_round = local_duration(2 * tof + t_reply_s + n_b + n_a, a.clock)
    t_reply = local_duration(t_reply_s, b.clock)
    est = SPEED_OF_LIGHT * (t_round - t_reply) / 2
    return RttMeasurement(a.id, b.id, RttKind.SINGLE_SIDED, est, (t_reply,), link.snr_db, link.los, d)


def rtt_double(
    a: Node,
    b: Node,
    t_reply1_s: float,
    t_reply2_s: float,
    link: LinkState,
    rng: np.random.Generator,
    radio: RadioConfig,
    model: ChannelModel | None = None,
    noise: bool = True,
) -> RttMeasurement:
    """
    両側 RTT (a→b→a→b の 3 回送信)。
    round1 と reply2 は a の時計、reply1 と round2 は b の時計で測る
    """
    if t_reply1_s <= 0 or t_reply2_s <= 0:
        raise ConfigurationError(f"応答時間は正である必要があります: {t_reply1_s}, {t_reply2_s}")
    d = a.position.distance_to(b.position)
    tof = d / SPEED_OF_LIGHT + link.excess_delay_s
    n1, n2, n3 = _rx_errors(3, toa_noise_std_s(radio, model, link.snr_db), rng, noise)

    round1 = local_duration(2 * tof + n1 + t_reply1_s + n2, a.clock)
    reply1 = local_duration(t_reply1_s, b.clock)
    round2 = local_duration(2 * tof + n2 + t_reply2_s + n3, b.clock)
    reply2 = local_duration(t_reply2_s, a.clock)

    tof_hat = (round1 * round2 - reply1 * reply2) / (round1 + round2 + reply1 + reply2)
    return RttMeasurement(
        a.id, b.id, RttKind.DOUBLE_SIDED, SPEED_OF_LIGHT * tof_hat, (reply1, reply2), link.snr_db, link.los, d
    )


def tdoa_from_toas(target_id: int, toas: list[ToaMeasurement]) -> TdoaSet:
    """先頭の ToA を基準にした到来時間差 (距離換算)"""
    if len(toas) < 3:
        raise ConfigurationError(f"TDoA には 3 台以上のアンカーが必要です ({len(toas)} 台)")
    ref = toas[0]
    diffs = tuple(
        TdoaDiff(t.tx_id, SPEED_OF_LIGHT * (t.toa_s - ref.toa_s)) for t in toas[1:]
    )
    return TdoaSet(target_id, ref.tx_id, diffs, tuple(toas))


def tdoa_set(
    target: Node,
    anchors: list[Node],
    links: dict[int, LinkState],
    rng: np.random.Generator,
    radio: RadioConfig,
    model: ChannelModel | None = None,
    noise: bool = True,
) -> TdoaSet:
    """各アンカーが送信した SL-PRS を目標端末が受信し、時間差を作る。links はアンカー id で引く"""
    if len(anchors) < 3:
        raise ConfigurationError(f"TDoA には 3 台以上のアンカーが必要です ({len(anchors)} 台)")
    toas = [measure_toa(a, target, links[a.id], rng, radio, model, noise) for a in anchors]
    return tdoa_from_toas(target.id, toas)


def measure_aoa(
    observer: Node,
    source: Node,
    link: LinkState,
    rng: np.random.Generator,
    radio: RadioConfig,
    model: ChannelModel | None = None,
    noise: bool = True,
) -> AoaMeasurement:
    """
    observer のアレイで source からの到来角を測る。
    乱数は 散乱判定・散乱方位・方位雑音・天頂雑音 の 4 個を毎回消費する
    """
    if radio.n_antennas < 2:
        raise CapabilityError(f"AoA 測定には 2 素子以上が必要です (n_antennas={radio.n_antennas})")
    v = source.position.as_array() - observer.position.as_array()
    horizontal = math.hypot(v[0], v[1])
    azimuth = math.atan2(v[1], v[0])
    zenith = math.atan2(horizontal, v[2])

    axis = observer.heading_rad + radio.array_axis_rad
    sigma, low_quality = aoa_std_rad(radio, link.snr_linear, math.sin(azimuth - axis) ** 2)

    u_scatter = rng.uniform()
    az_scatter = rng.uniform(-math.pi, math.pi)
    z_az, z_zen = rng.standard_normal(2)

    scatter_prob = model.nlos_angle_scatter_prob if model is not None else 1.0
    if not link.los and u_scatter < scatter_prob:
        azimuth = az_scatter
    if noise:
        azimuth += z_az * sigma
    if radio.planar_array:
        zenith = float(np.clip(zenith + (z_zen * sigma if noise else 0.0), 0.0, math.pi))
    else:
        zenith = math.pi / 2
    return AoaMeasurement(
        observer.id, source.id, _wrap(azimuth), zenith, sigma, link.snr_db, link.los, low_quality
    )
