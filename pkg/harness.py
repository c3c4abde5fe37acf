"""
モンテカルロ実験ハーネス

1 試行 = シナリオ生成 → アンカー選択 → クロック抽選 → リンク抽選 → 測定 → 測位 → 誤差記録。
試行 i の乱数はすべて (master_seed, i, 用途, id...) から作るので、
ワーカー数や実行順によらず同じ結果になる。
"""

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import Field
from tqdm import tqdm

from channel import ChannelModel, LinkState, draw_link
from clock import (
    DriftModel,
    FixedDrift,
    PerfectSync,
    SyncErrorModel,
    TruncatedNormalSync,
    UniformSymmetricDrift,
    sample_clock,
)
from errors import CapabilityError, ConfigurationError, GeometryError, SlposError, UsageError
from estimators import (
    EstimatorMethod,
    PositionEstimate,
    RangeObservation,
    SolverSettings,
    solve_aoa_triangulation,
    solve_hybrid_rtt_aoa,
    solve_range_multilateration,
    solve_tdoa,
)
from log_utils import get_logger, log_io
from measurement import (
    RadioConfig,
    RttKind,
    measure_aoa,
    measure_toa,
    one_way_range_m,
    rtt_double,
    rtt_single,
    tdoa_from_toas,
)
from protocol import ProtocolDelays, SessionKind, run_session, session_latency_s
from scenario import Dimensionality, Node, Position, ScenarioConfig, generate, gdop, select_anchors
from schema import FrozenModel

logger = get_logger("harness")

# 乱数ストリームの用途タグ
STREAM_SCENARIO = 0
STREAM_SELECT = 1
STREAM_CLOCK = 2
STREAM_CHANNEL = 3
STREAM_NOISE = 4
STREAM_SWEEP = 5
STREAM_ANGLE = 6

PERCENTILES = (0.50, 0.67, 0.90, 0.95, 0.99)
RESULT_COLUMNS = [
    "trial", "method", "bandwidth_hz", "n_anchors", "h_err_m", "v_err_m", "latency_s", "converged", "label",
]
MEASUREMENT_COLUMNS = ["trial", "method", "tx", "rx", "value", "snr_db", "los"]


# ===============================================
#  設定
# ===============================================
class ExperimentConfig(FrozenModel):
    scenario: ScenarioConfig
    method: EstimatorMethod = EstimatorMethod.TDOA
    rtt_kind: RttKind = RttKind.DOUBLE_SIDED
    t_reply_s: float = Field(default=1e-3, gt=0)
    t_reply2_s: float | None = Field(default=None, gt=0)
    radio: RadioConfig
    channel: ChannelModel
    sync: SyncErrorModel = Field(default_factory=PerfectSync)
    drift: DriftModel = Field(default_factory=FixedDrift)
    n_trials: int = Field(default=2000, ge=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    protocol_delays: ProtocolDelays = Field(default_factory=ProtocolDelays)
    session_kind: SessionKind = SessionKind.USL
    solver: SolverSettings = Field(default_factory=SolverSettings)
    noise_enabled: bool = True
    los_filter: bool = True
    common_random_numbers: bool = False
    record_measurements: bool = False


def min_anchors(method: EstimatorMethod, dimensionality: Dimensionality) -> int:
    """方式ごとの最少アンカー数 (2D: 距離・角度 3 台 / TDoA 3 台、ハイブリッド 1 台)"""
    method = EstimatorMethod(method)
    if method is EstimatorMethod.HYBRID_RTT_AOA:
        return 1
    return Dimensionality(dimensionality).n_axes + 1


def check_experiment(config: ExperimentConfig) -> None:
    """計算を始める前に方式とアンカー数・アンテナ数の整合を確認する"""
    method = config.method
    if method is EstimatorMethod.BRUTE_FORCE:
        raise ConfigurationError("BruteForce は検証用のオラクルで、実験の測位方式には使えません")
    need = min_anchors(method, config.scenario.dimensionality)
    if config.scenario.n_anchors < need:
        raise ConfigurationError(
            f"scenario.n_anchors={config.scenario.n_anchors} は {method.value} の最少 {need} 台に足りません"
        )
    if method in (EstimatorMethod.AOA_TRIANG, EstimatorMethod.HYBRID_RTT_AOA) and config.radio.n_antennas < 2:
        raise CapabilityError(f"{method.value} には radio.n_antennas >= 2 が必要です")
    if (method is EstimatorMethod.AOA_TRIANG and config.scenario.dimensionality is Dimensionality.THREE_D
            and not config.radio.planar_array):
        raise CapabilityError("3 次元の AoA 三角測量には radio.planar_array=true が必要です")


def _with(model: FrozenModel, **updates) -> FrozenModel:
    """更新後の値も検証し直したコピー"""
    return type(model).model_validate({**model.model_dump(), **updates})


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key)))


# ===============================================
#  試行
# ===============================================
@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    true_position: Position
    estimate: PositionEstimate
    horizontal_error_m: float
    vertical_error_m: float
    latency_s: float
    converged: bool
    method: EstimatorMethod
    bandwidth_hz: float
    n_anchors: int
    n_used_anchors: int = 0
    ranging_error_m: float = float("nan")
    gdop: float = float("nan")
    target_speed_mps: float = 0.0
    error: str = ""
    measurements: tuple[dict, ...] = field(default=(), repr=False)


def _keep_los(links: dict[int, LinkState], anchor_ids: list[int], need: int) -> list[int]:
    """LoS のアンカーを残し、足りなければ SNR の高い NLoS で補う (選択順は保つ)"""
    los = [a for a in anchor_ids if links[a].los]
    if len(los) >= need:
        return los
    nlos = sorted((a for a in anchor_ids if not links[a].los), key=lambda a: (-links[a].snr_db, a))
    extra = set(nlos[: need - len(los)])
    return [a for a in anchor_ids if links[a].los or a in extra]


def _fallback(anchors: list[Node], method: EstimatorMethod) -> PositionEstimate:
    centroid = np.mean([a.position.as_array() for a in anchors], axis=0)
    return PositionEstimate(Position.from_array(centroid), method, 0, False, float("nan"))


def run_trial(config: ExperimentConfig, trial: int, latency_s: float = 0.0) -> TrialRecord:
    seed = config.master_seed
    scenario = generate(config.scenario, rng=_stream(seed, trial, STREAM_SCENARIO))
    target_id = scenario.target_id
    anchor_ids = select_anchors(
        scenario, target_id, config.scenario.n_anchors, config.scenario.anchor_policy,
        rng=_stream(seed, trial, STREAM_SELECT),
    )

    nodes = {}
    for nid in [target_id] + anchor_ids:
        clock = sample_clock(config.sync, config.drift, _stream(seed, trial, STREAM_CLOCK, nid))
        nodes[nid] = scenario.node(nid).with_clock(clock)
    target = nodes[target_id]

    links = {}
    for aid in anchor_ids:
        lo, hi = sorted((aid, target_id))
        links[aid] = draw_link(
            nodes[aid], target, config.channel, config.radio,
            _stream(seed, trial, STREAM_CHANNEL, lo, hi), scenario.clutter_density,
        )

    method = config.method
    dim = config.scenario.dimensionality
    noise = config.noise_enabled
    radio, channel = config.radio, config.channel
    need = min_anchors(method, dim)
    used = _keep_los(links, anchor_ids, need) if config.los_filter else list(anchor_ids)
    rows: list[dict] = []
    ranging_errors: list[float] = []

    def noise_rng(aid: int) -> np.random.Generator:
        return _stream(seed, trial, STREAM_NOISE, aid)

    def row(tx, rx, value, link):
        if config.record_measurements:
            rows.append(dict(trial=trial, method=method.value, tx=tx, rx=rx, value=value,
                             snr_db=link.snr_db, los=link.los))

    def rtt(aid: int):
        a, b = target, nodes[aid]
        if config.rtt_kind is RttKind.SINGLE_SIDED:
            m = rtt_single(a, b, config.t_reply_s, links[aid], noise_rng(aid), radio, channel, noise)
        else:
            t2 = config.t_reply2_s or config.t_reply_s
            m = rtt_double(a, b, config.t_reply_s, t2, links[aid], noise_rng(aid), radio, channel, noise)
        row(target_id, aid, m.est_range_m, links[aid])
        return m

    error = ""
    try:
        if method is EstimatorMethod.TDOA:
            # 全アンカー分を測ってから LoS で絞る (乱数の消費量をそろえる)
            toas = {a: measure_toa(nodes[a], target, links[a], noise_rng(a), radio, channel, noise)
                    for a in anchor_ids}
            for a in anchor_ids:
                row(a, target_id, toas[a].toa_s, links[a])
            tdoa = tdoa_from_toas(target_id, [toas[a] for a in used])
            estimate = solve_tdoa(tdoa, {a: nodes[a].position for a in used}, config.solver, dim)

        elif method in (EstimatorMethod.RTT_MULTILAT, EstimatorMethod.TOA_MULTILAT):
            ranges = {}
            for a in anchor_ids:
                if method is EstimatorMethod.RTT_MULTILAT:
                    ranges[a] = rtt(a).est_range_m
                else:
                    toa = measure_toa(nodes[a], target, links[a], noise_rng(a), radio, channel, noise)
                    row(a, target_id, toa.toa_s, links[a])
                    ranges[a] = one_way_range_m(toa)
            for a in used:
                ranging_errors.append(abs(ranges[a] - nodes[a].position.distance_to(target.position)))
            estimate = solve_range_multilateration(
                [RangeObservation(nodes[a].position, ranges[a]) for a in used],
                config.solver, dim, method=method,
            )

        elif method is EstimatorMethod.AOA_TRIANG:
            bearings = {a: measure_aoa(nodes[a], target, links[a], noise_rng(a), radio, channel, noise)
                        for a in anchor_ids}
            for a in anchor_ids:
                row(a, target_id, bearings[a].azimuth_rad, links[a])
            estimate = solve_aoa_triangulation(
                [bearings[a] for a in used], {a: nodes[a].position for a in used}, config.solver, dim
            )

        else:
            # ハイブリッド: LoS 優先で先頭のアンカー 1 台と RTT + AoA
            aid = used[0]
            m = rtt(aid)
            bearing = measure_aoa(
                nodes[aid], target, links[aid], _stream(seed, trial, STREAM_ANGLE, aid), radio, channel, noise
            )
            row(aid, target_id, bearing.azimuth_rad, links[aid])
            ranging_errors.append(abs(m.est_range_m - m.true_range_m))
            estimate = solve_hybrid_rtt_aoa(m, bearing, nodes[aid])
    except SlposError as e:
        estimate = _fallback([nodes[a] for a in used], method)
        error = f"{type(e).__name__}: {e}"

    truth = target.position
    est = estimate.position
    h_err = math.hypot(est.x - truth.x, est.y - truth.y)
    # 2 次元では z を固定して解くので垂直誤差は測っていない (nan)
    v_err = abs(est.z - truth.z) if dim is Dimensionality.THREE_D else float("nan")
    try:
        g = gdop([nodes[a].position for a in used], truth, dim)
    except GeometryError:
        g = float("nan")

    return TrialRecord(
        trial_index=trial,
        true_position=truth,
        estimate=estimate,
        horizontal_error_m=h_err,
        vertical_error_m=v_err,
        latency_s=latency_s,
        converged=estimate.converged and not error,
        method=method,
        bandwidth_hz=radio.bandwidth_hz,
        n_anchors=config.scenario.n_anchors,
        n_used_anchors=len(used),
        ranging_error_m=float(np.mean(ranging_errors)) if ranging_errors else float("nan"),
        gdop=g,
        target_speed_mps=target.speed,
        error=error,
        measurements=tuple(rows),
    )


def session_latency(config: ExperimentConfig) -> float:
    """遅延は構造的 (メッセージ数 × 遅延) なので設定ごとに 1 回だけ計算する"""
    session = run_session(
        config.session_kind, config.method, config.rtt_kind, config.scenario.n_anchors, config.protocol_delays
    )
    return session_latency_s(session)


@log_io(mask=200)
def run(config: ExperimentConfig, workers: int = 1, progress: bool = False, desc: str = "trials") -> list[TrialRecord]:
    """n_trials 回の試行を実行し、trial_index 順に並べて返す"""
    check_experiment(config)
    latency = session_latency(config)
    logger.info(
        f"🚀 {config.method.value} / {config.radio.bandwidth_hz / 1e6:g} MHz / "
        f"アンカー {config.scenario.n_anchors} 台 / {config.n_trials} 試行 (workers={workers})"
    )

    def _one(i: int) -> TrialRecord:
        return run_trial(config, i, latency)

    trials = range(config.n_trials)
    bar = tqdm(total=config.n_trials, desc=desc, disable=not progress, leave=False)
    try:
        if workers <= 1:
            records = []
            for i in trials:
                records.append(_one(i))
                bar.update(1)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = []
                for rec in pool.map(_one, trials):
                    records.append(rec)
                    bar.update(1)
    finally:
        bar.close()

    records.sort(key=lambda r: r.trial_index)
    failed = sum(1 for r in records if r.error)
    if failed:
        logger.warning(f"⚠️ 幾何エラー等で測位できなかった試行: {failed}/{len(records)}")
    return records


# ===============================================
#  集計
# ===============================================
@dataclass(frozen=True)
class CdfSummary:
    sorted_errors_m: tuple[float, ...]

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "CdfSummary":
        if len(values) == 0:
            raise UsageError("空の誤差列は集計できません")
        return cls(tuple(sorted(float(v) for v in values)))

    @property
    def n(self) -> int:
        return len(self.sorted_errors_m)

    def percentile(self, p: float) -> float:
        """最近順位法: 昇順 1 始まりで ceil(p * n) 番目"""
        if not 0.0 <= p <= 1.0:
            raise UsageError(f"p は [0, 1] で指定してください: {p}")
        rank = max(1, math.ceil(p * self.n - 1e-9))
        return self.sorted_errors_m[rank - 1]

    def availability(self, threshold_m: float) -> float:
        """誤差が threshold 以下の割合"""
        k = int(np.searchsorted(np.asarray(self.sorted_errors_m), threshold_m, side="right"))
        return k / self.n


@dataclass(frozen=True)
class ExperimentSummary:
    horizontal: CdfSummary
    vertical: CdfSummary | None = None
    latency: CdfSummary | None = None
    converged_fraction: float = 1.0
    max_target_speed_mps: float = 0.0


def _vertical_summary(values: Sequence[float]) -> CdfSummary | None:
    """垂直誤差を測っていない (nan を含む) 試行列なら None"""
    if any(math.isnan(v) for v in values):
        return None
    return CdfSummary.from_values(values)


def summarize(records: Sequence[TrialRecord]) -> ExperimentSummary:
    """未収束の試行も最良反復の誤差のまま含める"""
    if not records:
        raise UsageError("集計する試行がありません")
    return ExperimentSummary(
        horizontal=CdfSummary.from_values([r.horizontal_error_m for r in records]),
        vertical=_vertical_summary([r.vertical_error_m for r in records]),
        latency=CdfSummary.from_values([r.latency_s for r in records]),
        converged_fraction=sum(r.converged for r in records) / len(records),
        max_target_speed_mps=max(r.target_speed_mps for r in records),
    )


# ===============================================
#  PSL 判定
# ===============================================
class PslRequirement(FrozenModel):
    name: str
    horizontal_m: float = Field(gt=0)
    vertical_m: float | None = Field(default=None, gt=0)
    availability_frac: float = Field(gt=0, le=1)
    latency_s: float | None = Field(default=None, gt=0)
    relative: bool = False
    mobility_class: str = ""
    max_speed_kmh: float | None = Field(default=None, gt=0)
    placeholder: bool = False


@dataclass(frozen=True)
class PslClause:
    name: str
    required: float
    achieved: float
    margin: float
    passed: bool
    evaluated: bool = True


@dataclass(frozen=True)
class PslReport:
    name: str
    passed: bool
    clauses: tuple[PslClause, ...]
    placeholder: bool = False
    note: str = ""


AVAILABILITY_EPS = 1e-12


def evaluate_psl(summary: ExperimentSummary, psl: PslRequirement) -> PslReport:
    """評価できた全条項を満たせば合格。可用率の比較は >= (等号で合格)"""
    clauses = []
    a_h = summary.horizontal.availability(psl.horizontal_m)
    clauses.append(PslClause(
        f"horizontal<={psl.horizontal_m:g}m", psl.availability_frac, a_h,
        a_h - psl.availability_frac, a_h + AVAILABILITY_EPS >= psl.availability_frac,
    ))
    notes = []
    if psl.vertical_m is not None:
        name = f"vertical<={psl.vertical_m:g}m"
        if summary.vertical is None:
            # 2 次元の試行では垂直条項を判定できない。合否には数えない
            clauses.append(PslClause(name, psl.availability_frac, math.nan, math.nan, False, evaluated=False))
            notes.append("垂直誤差を測っていない (2 次元) ため垂直条項は未評価")
        else:
            a_v = summary.vertical.availability(psl.vertical_m)
            clauses.append(PslClause(
                name, psl.availability_frac, a_v,
                a_v - psl.availability_frac, a_v + AVAILABILITY_EPS >= psl.availability_frac,
            ))
    if psl.latency_s is not None:
        if summary.latency is None:
            raise UsageError(f"{psl.name} は遅延の集計を必要とします")
        lat = summary.latency.percentile(psl.availability_frac)
        clauses.append(PslClause(
            f"latency<={psl.latency_s:g}s", psl.latency_s, lat, psl.latency_s - lat, lat <= psl.latency_s,
        ))

    if psl.max_speed_kmh is not None and summary.max_target_speed_mps * 3.6 > psl.max_speed_kmh:
        notes.append(f"目標端末の最高速度 {summary.max_target_speed_mps * 3.6:.0f} km/h が想定 {psl.max_speed_kmh:g} km/h を超えています")
    passed = all(c.passed for c in clauses if c.evaluated)
    return PslReport(psl.name, passed, tuple(clauses), psl.placeholder, "; ".join(notes))


# ===============================================
#  スイープ
# ===============================================
class SweepAxis(str, Enum):
    BANDWIDTH_HZ = "bandwidth_hz"
    N_ANCHORS = "n_anchors"
    SYNC_STD_S = "sync_std_s"
    DRIFT_PPM = "drift_ppm"
    N_ANTENNAS = "n_antennas"


def apply_axis(config: ExperimentConfig, axis: SweepAxis, value) -> ExperimentConfig:
    axis = SweepAxis(axis)
    if axis is SweepAxis.BANDWIDTH_HZ:
        return _with(config, radio=_with(config.radio, bandwidth_hz=float(value)))
    if axis is SweepAxis.N_ANCHORS:
        return _with(config, scenario=_with(config.scenario, n_anchors=int(value)))
    if axis is SweepAxis.N_ANTENNAS:
        if config.method not in (EstimatorMethod.AOA_TRIANG, EstimatorMethod.HYBRID_RTT_AOA):
            raise ConfigurationError(f"n_antennas のスイープは角度を使わない {config.method.value} では無意味です")
        return _with(config, radio=_with(config.radio, n_antennas=int(value)))
    if axis is SweepAxis.SYNC_STD_S:
        std = float(value)
        if std == 0:
            return _with(config, sync=PerfectSync())
        base = config.sync
        if isinstance(base, TruncatedNormalSync) and base.std_s > 0:
            ratio = std / base.std_s
            sync = TruncatedNormalSync(
                mean_s=base.mean_s * ratio, std_s=std,
                lower_s=base.lower_s * ratio, upper_s=base.upper_s * ratio,
            )
        else:
            sync = TruncatedNormalSync(mean_s=0.0, std_s=std, lower_s=-3 * std, upper_s=3 * std)
        return _with(config, sync=sync)
    # DRIFT_PPM
    if isinstance(config.drift, UniformSymmetricDrift):
        return _with(config, drift=UniformSymmetricDrift(max_abs_ppm=float(value)))
    return _with(config, drift=FixedDrift(ppm=float(value)))


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    label: str
    summary: ExperimentSummary
    records: tuple[TrialRecord, ...] = field(repr=False, default=())
    series_axis: str = ""
    series_value: float | None = None


def _derived_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=master_seed, spawn_key=(STREAM_SWEEP, index)).generate_state(1, np.uint64)[0])


def _label(axis: SweepAxis, value) -> str:
    return f"{axis.value}={value:g}" if isinstance(value, (int, float)) else f"{axis.value}={value}"


@log_io(mask=200)
def sweep(
    base: ExperimentConfig,
    axis: SweepAxis,
    values: Sequence,
    workers: int = 1,
    progress: bool = False,
    series_axis: SweepAxis | None = None,
    series_values: Sequence = (),
) -> list[SweepRow]:
    """
    axis の各値で 1 回ずつ run する。series_axis を渡すと外側のループになる (例: 同期誤差 無/有 × 帯域)。
    common_random_numbers が偽なら値ごとに派生シードを使う
    """
    axis = SweepAxis(axis)
    if not values:
        raise UsageError("スイープ値が空です")
    outer = [(None, None)]
    if series_axis is not None:
        series_axis = SweepAxis(series_axis)
        if not series_values:
            raise UsageError("系列の値が空です")
        outer = [(series_axis, v) for v in series_values]

    # 計算前に全組み合わせを検証する
    plan = []
    for s_axis, s_val in outer:
        cfg_s = apply_axis(base, s_axis, s_val) if s_axis is not None else base
        for v in values:
            cfg = apply_axis(cfg_s, axis, v)
            check_experiment(cfg)
            plan.append((s_axis, s_val, v, cfg))

    rows = []
    for index, (s_axis, s_val, v, cfg) in enumerate(tqdm(plan, desc="sweep", disable=not progress)):
        if not base.common_random_numbers:
            cfg = _with(cfg, master_seed=_derived_seed(base.master_seed, index))
        label = _label(axis, v) if s_axis is None else f"{_label(s_axis, s_val)},{_label(axis, v)}"
        records = run(cfg, workers=workers, progress=progress, desc=label)
        summary = summarize(records)
        logger.info(f"📊 {label}: p90={summary.horizontal.percentile(0.9):.3f} m, "
                    f"P(<=1m)={summary.horizontal.availability(1.0):.3f}")
        rows.append(SweepRow(axis.value, float(v), label, summary, tuple(records),
                             s_axis.value if s_axis else "", None if s_val is None else float(s_val)))
    return rows


# ===============================================
#  出力
# ===============================================
def _fmt(x: float) -> str:
    return repr(float(x))


def write_results_csv(path: Path, groups: Sequence[tuple[str, Sequence[TrialRecord]]]) -> None:
    """(ラベル, 試行列) の組を 1 つの CSV に縦持ちで書く"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RESULT_COLUMNS)
        for label, records in groups:
            for r in records:
                writer.writerow([
                    r.trial_index, r.method.value, _fmt(r.bandwidth_hz), r.n_anchors,
                    _fmt(r.horizontal_error_m), _fmt(r.vertical_error_m), _fmt(r.latency_s),
                    int(r.converged), label,
                ])


def write_measurements_csv(path: Path, groups: Sequence[tuple[str, Sequence[TrialRecord]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=MEASUREMENT_COLUMNS)
        writer.writeheader()
        for _, records in groups:
            for r in records:
                for m in r.measurements:
                    writer.writerow({**m, "value": _fmt(m["value"]), "snr_db": _fmt(m["snr_db"]),
                                     "los": int(m["los"])})


def read_results_csv(path: Path) -> dict[str, ExperimentSummary]:
    """結果 CSV をラベルごとに集計し直す"""
    groups: dict[str, dict[str, list]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in RESULT_COLUMNS if c != "label" and c not in (reader.fieldnames or [])]
        if missing:
            raise UsageError(f"結果 CSV に列がありません: {missing}")
        for line in reader:
            g = groups.setdefault(line.get("label") or "", {"h": [], "v": [], "lat": [], "conv": []})
            try:
                h, v, lat = (float(line[c]) for c in ("h_err_m", "v_err_m", "latency_s"))
            except (TypeError, ValueError) as e:
                raise UsageError(f"結果 CSV の {reader.line_num} 行目を数値として読めません: {e}") from e
            g["h"].append(h)
            g["v"].append(v)
            g["lat"].append(lat)
            g["conv"].append(line["converged"] in ("1", "True", "true"))
    if not groups:
        raise UsageError(f"結果 CSV が空です: {path}")
    return {
        label: ExperimentSummary(
            CdfSummary.from_values(g["h"]), _vertical_summary(g["v"]), CdfSummary.from_values(g["lat"]),
            sum(g["conv"]) / len(g["conv"]),
        )
        for label, g in groups.items()
    }


def summary_to_dict(
    summary: ExperimentSummary,
    thresholds_m: Sequence[float],
    psl_reports: Sequence[PslReport] = (),
) -> dict:
    def cdf(c: CdfSummary | None) -> dict | None:
        if c is None:
            return None
        return {
            "n": c.n,
            **{f"p{int(round(p * 100))}": c.percentile(p) for p in PERCENTILES},
            "availability": {f"{t:g}": c.availability(t) for t in thresholds_m},
        }

    return {
        "horizontal": cdf(summary.horizontal),
        "vertical": cdf(summary.vertical),
        "latency": cdf(summary.latency),
        "converged_fraction": summary.converged_fraction,
        "psl": [
            {
                "name": r.name,
                "pass": r.passed,
                "placeholder": r.placeholder,
                "note": r.note,
                "clauses": [
                    {"name": c.name, "required": c.required,
                     "achieved": c.achieved if c.evaluated else None,
                     "margin": c.margin if c.evaluated else None,
                     "pass": c.passed, "evaluated": c.evaluated}
                    for c in r.clauses
                ],
            }
            for r in psl_reports
        ],
    }


def write_summary_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, ensure_ascii=False, indent=2, sort_keys=False)
        f.write("\n")
