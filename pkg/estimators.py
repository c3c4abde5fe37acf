"""
位置推定ソルバ

・距離 (RTT / ToA) による多辺測量   : 減衰付き Gauss-Newton (Levenberg 型)
・TDoA 双曲線測位                   : 同上、解析ヤコビアン
・AoA 方位線の交点                  : 重み付き最小二乗の閉形式
・RTT + AoA のハイブリッド          : 1 アンカーの極座標 → 直交座標
・総当たりグリッド                  : テスト用のオラクル
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from pydantic import Field

from errors import ConfigurationError, GeometryError, UsageError
from measurement import AoaMeasurement, RttMeasurement, TdoaSet
from scenario import Bounds, Dimensionality, Node, Position
from schema import FrozenModel

DISTANCE_FLOOR_M = 1e-9
MAX_GRID_CELLS = 10**8
GRID_CHUNK = 1_000_000
MIN_CROSSING_ANGLE_RAD = math.radians(2.0)


class EstimatorMethod(str, Enum):
    RTT_MULTILAT = "RttMultilat"
    TOA_MULTILAT = "ToaMultilat"
    TDOA = "Tdoa"
    AOA_TRIANG = "AoaTriang"
    HYBRID_RTT_AOA = "HybridRttAoa"
    BRUTE_FORCE = "BruteForce"


class InitStrategy(str, Enum):
    ANCHOR_CENTROID = "AnchorCentroid"
    PROVIDED = "Provided"


class SolverSettings(FrozenModel):
    max_iterations: int = Field(default=100, ge=1)
    step_tolerance_m: float = Field(default=1e-6, gt=0)
    damping_initial: float = Field(default=1e-3, gt=0)
    init_strategy: InitStrategy = InitStrategy.ANCHOR_CENTROID


@dataclass(frozen=True)
class PositionEstimate:
    position: Position
    method: EstimatorMethod
    iterations: int
    converged: bool
    final_residual_norm: float
    ambiguous: bool = False
    last_step_norm: float = 0.0


@dataclass(frozen=True)
class RangeObservation:
    anchor_position: Position
    range_m: float


# ===============================================
#  残差とヤコビアン
# ===============================================
def _unit_rows(x: np.ndarray, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = x[None, :] - anchors
    dist = np.linalg.norm(v, axis=1)
    return v / np.maximum(dist, DISTANCE_FLOOR_M)[:, None], dist


def range_residuals(x, anchors, ranges) -> np.ndarray:
    _, dist = _unit_rows(np.asarray(x, float), np.asarray(anchors, float))
    return dist - np.asarray(ranges, float)


def range_jacobian(x, anchors) -> np.ndarray:
    units, _ = _unit_rows(np.asarray(x, float), np.asarray(anchors, float))
    return units


def tdoa_residuals(x, anchors, ref, diffs) -> np.ndarray:
    x = np.asarray(x, float)
    _, dist = _unit_rows(x, np.asarray(anchors, float))
    d_ref = float(np.linalg.norm(x - np.asarray(ref, float)))
    return (dist - d_ref) - np.asarray(diffs, float)


def tdoa_jacobian(x, anchors, ref) -> np.ndarray:
    x = np.asarray(x, float)
    units, _ = _unit_rows(x, np.asarray(anchors, float))
    u_ref, _ = _unit_rows(x, np.asarray(ref, float)[None, :])
    return units - u_ref


def range_cost(points, anchors, ranges) -> np.ndarray:
    """点群 (M, >=d) それぞれの二乗残差和。列数は anchors に合わせて切り詰める"""
    anchors = np.asarray(anchors, float)
    pts = np.asarray(points, float)[:, : anchors.shape[1]]
    dist = np.linalg.norm(pts[:, None, :] - anchors[None, :, :], axis=2)
    return np.sum((dist - np.asarray(ranges, float)[None, :]) ** 2, axis=1)


def tdoa_cost(points, anchors, ref, diffs) -> np.ndarray:
    anchors = np.asarray(anchors, float)
    pts = np.asarray(points, float)[:, : anchors.shape[1]]
    dist = np.linalg.norm(pts[:, None, :] - anchors[None, :, :], axis=2)
    d_ref = np.linalg.norm(pts - np.asarray(ref, float)[None, :], axis=1)
    return np.sum((dist - d_ref[:, None] - np.asarray(diffs, float)[None, :]) ** 2, axis=1)


# ===============================================
#  減衰付き Gauss-Newton
# ===============================================
@dataclass
class _SolveResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norm: float
    last_step: float
    costs: list[float] = field(default_factory=list)


def _damped_gauss_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    settings: SolverSettings,
) -> _SolveResult:
    """
    (J^T J + lam * s * I) dx = -J^T r を解く。s は J^T J の対角平均。
    コストが増えるステップは棄却して lam を 10 倍、受理したら 1/10 にする
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    cost = float(r @ r)
    lam = settings.damping_initial
    dim = x.size
    last_step = math.inf
    iterations = 0
    costs = [cost]

    for iterations in range(1, settings.max_iterations + 1):
        J = jacobian(x)
        A = J.T @ J
        g = J.T @ r
        scale = max(float(np.trace(A)) / dim, 1e-12)

        accepted = False
        stalled = False
        for _ in range(40):
            try:
                step = np.linalg.solve(A + lam * scale * np.eye(dim), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if not np.all(np.isfinite(step)):
                lam *= 10
                continue
            step_norm = float(np.linalg.norm(step))
            x_new = x + step
            r_new = residual(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                x, r, cost = x_new, r_new, cost_new
                costs.append(cost)
                lam = max(lam / 10, 1e-15)
                last_step = step_norm
                accepted = True
                break
            if step_norm <= settings.step_tolerance_m:
                # これ以上コストを下げられない停留点
                last_step = step_norm
                stalled = True
                break
            lam *= 10
        else:
            raise GeometryError("減衰を上げても正規方程式が解けません")

        if stalled or (accepted and last_step <= settings.step_tolerance_m):
            return _SolveResult(x, iterations, True, math.sqrt(cost), last_step, costs)

    return _SolveResult(x, iterations, False, math.sqrt(cost), last_step, costs)


def _solve_with_restart(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    x_alt: np.ndarray | None,
    settings: SolverSettings,
) -> _SolveResult:
    """
    x0 から解き、残差が許容値を超えて止まったら線形化解 x_alt からもう一度解いて
    コストの小さい方を返す
    """
    res = _damped_gauss_newton(residual, jacobian, x0, settings)
    if x_alt is None or res.residual_norm <= settings.step_tolerance_m:
        return res
    try:
        alt = _damped_gauss_newton(residual, jacobian, x_alt, settings)
    except GeometryError:
        return res
    best = alt if alt.residual_norm < res.residual_norm else res
    best.iterations = res.iterations + alt.iterations
    return best


# ===============================================
#  線形化した最小二乗 (反復の出発点)
# ===============================================
def _lstsq_point(A: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        return None
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    return x if np.all(np.isfinite(x)) else None


def linearized_range_fix(anchors, ranges) -> np.ndarray | None:
    """
    |x - a_i|^2 = r_i^2 を先頭の式と引き算して
    2 (a_i - a_0)^T x = r_0^2 - r_i^2 + |a_i|^2 - |a_0|^2 を最小二乗で解く。
    アンカーが d + 1 台未満なら None
    """
    anchors = np.asarray(anchors, float)
    ranges = np.asarray(ranges, float)
    a0, r0 = anchors[0], ranges[0]
    A = 2.0 * (anchors[1:] - a0)
    b = r0**2 - ranges[1:] ** 2 + np.sum(anchors[1:] ** 2, axis=1) - a0 @ a0
    return _lstsq_point(A, b)


def linearized_tdoa_fix(anchors, ref, diffs) -> np.ndarray | None:
    """
    基準アンカーまでの距離 R も未知数に加えた線形系
    2 diff_i R + 2 (a_i - ref)^T x = |a_i|^2 - |ref|^2 - diff_i^2。
    差分が d + 1 本未満なら None
    """
    anchors = np.asarray(anchors, float)
    ref = np.asarray(ref, float)
    diffs = np.asarray(diffs, float)
    A = np.column_stack([2.0 * diffs, 2.0 * (anchors - ref)])
    b = np.sum(anchors**2, axis=1) - ref @ ref - diffs**2
    sol = _lstsq_point(A, b)
    return None if sol is None else sol[1:]


def _check_spread(points: np.ndarray, d: int, what: str):
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[min(d, len(s)) - 1] / s[0] < 1e-9:
        raise GeometryError(f"{what}: アンカーが共線または共面に並んでいます")


def _axes(dimensionality) -> int:
    return Dimensionality(dimensionality).n_axes


def _to_position(x: np.ndarray, z_fixed: float) -> Position:
    if not np.all(np.isfinite(x)):
        raise GeometryError("推定値が有限値ではありません")
    return Position(float(x[0]), float(x[1]), float(x[2]) if x.size > 2 else z_fixed)


def _initial_point(anchors: np.ndarray, settings: SolverSettings, init: Position | None, d: int) -> np.ndarray:
    if settings.init_strategy is InitStrategy.PROVIDED:
        if init is None:
            raise UsageError("init_strategy=Provided には初期位置が必要です")
        return init.as_array()[:d]
    return anchors.mean(axis=0)


def solve_range_multilateration(
    ranges: Sequence[RangeObservation],
    settings: SolverSettings | None = None,
    dimensionality: Dimensionality = Dimensionality.TWO_D,
    init: Position | None = None,
    method: EstimatorMethod = EstimatorMethod.RTT_MULTILAT,
) -> PositionEstimate:
    """sum (|x - a_i| - r_i)^2 を最小化する。2 次元では z をアンカー平均高に固定する"""
    settings = settings or SolverSettings()
    d = _axes(dimensionality)
    if len(ranges) < d:
        raise ConfigurationError(f"{d} 次元の距離測位には {d} 本以上の距離が必要です ({len(ranges)} 本)")
    full = np.array([r.anchor_position.as_array() for r in ranges])
    anchors = full[:, :d]
    rr = np.array([r.range_m for r in ranges], dtype=float)
    z_fixed = float(full[:, 2].mean())

    ambiguous = len(ranges) == d
    if not ambiguous:
        _check_spread(anchors, d, "距離測位")

    x0 = _initial_point(anchors, settings, init, d)
    if ambiguous and settings.init_strategy is InitStrategy.ANCHOR_CENTROID:
        # 重心はアンカーを結ぶ線 (面) 上にあるので、法線方向へずらして片側の解に寄せる
        _, _, vt = np.linalg.svd(anchors - anchors.mean(axis=0))
        x0 = x0 + vt[-1] * max(1.0, float(np.ptp(anchors, axis=0).max()))

    x_alt = None
    if not ambiguous and settings.init_strategy is InitStrategy.ANCHOR_CENTROID:
        x_alt = linearized_range_fix(anchors, rr)
    res = _solve_with_restart(
        lambda x: range_residuals(x, anchors, rr),
        lambda x: range_jacobian(x, anchors),
        x0,
        x_alt,
        settings,
    )
    return PositionEstimate(
        _to_position(res.x, z_fixed), method, res.iterations, res.converged,
        res.residual_norm, ambiguous, res.last_step,
    )


def solve_tdoa(
    tdoa: TdoaSet,
    anchor_positions: Mapping[int, Position],
    settings: SolverSettings | None = None,
    dimensionality: Dimensionality = Dimensionality.TWO_D,
    init: Position | None = None,
) -> PositionEstimate:
    """sum ((|x - a_i| - |x - a_ref|) - diff_i)^2 を最小化する"""
    settings = settings or SolverSettings()
    d = _axes(dimensionality)
    if len(tdoa.diffs) < d:
        raise ConfigurationError(f"{d} 次元の TDoA には差分が {d} 本以上必要です ({len(tdoa.diffs)} 本)")
    ref_full = anchor_positions[tdoa.ref_anchor_id].as_array()
    full = np.array([anchor_positions[df.anchor_id].as_array() for df in tdoa.diffs])
    anchors, ref = full[:, :d], ref_full[:d]
    diffs = np.array([df.diff_m for df in tdoa.diffs], dtype=float)
    all_anchors = np.vstack([ref[None, :], anchors])
    z_fixed = float(np.vstack([ref_full[None, :], full])[:, 2].mean())
    _check_spread(all_anchors, d, "TDoA")

    x0 = _initial_point(all_anchors, settings, init, d)
    x_alt = None
    if settings.init_strategy is InitStrategy.ANCHOR_CENTROID:
        x_alt = linearized_tdoa_fix(anchors, ref, diffs)
    res = _solve_with_restart(
        lambda x: tdoa_residuals(x, anchors, ref, diffs),
        lambda x: tdoa_jacobian(x, anchors, ref),
        x0,
        x_alt,
        settings,
    )
    return PositionEstimate(
        _to_position(res.x, z_fixed), EstimatorMethod.TDOA, res.iterations, res.converged,
        res.residual_norm, False, res.last_step,
    )


def _direction(b: AoaMeasurement, d: int) -> np.ndarray:
    if d == 2:
        return np.array([math.cos(b.azimuth_rad), math.sin(b.azimuth_rad)])
    s = math.sin(b.zenith_rad)
    return np.array([math.cos(b.azimuth_rad) * s, math.sin(b.azimuth_rad) * s, math.cos(b.zenith_rad)])


def solve_aoa_triangulation(
    bearings: Sequence[AoaMeasurement],
    observer_positions: Mapping[int, Position],
    settings: SolverSettings | None = None,
    dimensionality: Dimensionality = Dimensionality.TWO_D,
    min_crossing_angle_rad: float = MIN_CROSSING_ANGLE_RAD,
) -> PositionEstimate:
    """
    方位線までの距離の二乗和 (重み 1/sigma^2) を最小にする点。
    sum w (I - u u^T) x = sum w (I - u u^T) p を解く
    """
    d = _axes(dimensionality)
    if len(bearings) < 2:
        raise ConfigurationError(f"AoA 三角測量には 2 本以上の方位が必要です ({len(bearings)} 本)")
    full = np.array([observer_positions[b.observer_id].as_array() for b in bearings])
    points = full[:, :d]
    if np.ptp(points, axis=0).max() < DISTANCE_FLOOR_M:
        raise GeometryError("観測点がすべて同じ位置にあります")

    dirs = np.array([_direction(b, d) for b in bearings])
    # 方位線どうしの交差角 (直線なので 0..pi/2)
    cross = np.abs(np.clip(dirs @ dirs.T, -1.0, 1.0))
    max_angle = float(np.arccos(cross.min()))
    if max_angle < min_crossing_angle_rad:
        raise GeometryError(f"方位線がほぼ平行です (最大交差角 {math.degrees(max_angle):.3f} 度)")

    w = np.array([1.0 / max(b.std_rad, 1e-12) ** 2 for b in bearings])
    w = w / w.max()
    A = np.zeros((d, d))
    rhs = np.zeros(d)
    for wi, u, p in zip(w, dirs, points):
        P = np.eye(d) - np.outer(u, u)
        A += wi * P
        rhs += wi * P @ p
    if np.linalg.cond(A) > 1e8:
        raise GeometryError("方位線の正規方程式の条件数が大きすぎます")
    x = np.linalg.solve(A, rhs)

    perp = [(np.eye(d) - np.outer(u, u)) @ (x - p) for u, p in zip(dirs, points)]
    residual = math.sqrt(sum(float(v @ v) for v in perp))
    return PositionEstimate(
        _to_position(x, float(full[:, 2].mean())), EstimatorMethod.AOA_TRIANG, 0, True, residual
    )


def solve_hybrid_rtt_aoa(range_: RttMeasurement, bearing: AoaMeasurement, anchor: Node) -> PositionEstimate:
    """アンカーから見た方位と距離で 1 点を決める"""
    r = max(range_.est_range_m, 0.0)
    az, zen = bearing.azimuth_rad, bearing.zenith_rad
    offset = r * np.array([math.cos(az) * math.sin(zen), math.sin(az) * math.sin(zen), math.cos(zen)])
    x = anchor.position.as_array() + offset
    return PositionEstimate(Position.from_array(x), EstimatorMethod.HYBRID_RTT_AOA, 0, True, 0.0)


def brute_force(
    cost: Callable[[np.ndarray], np.ndarray],
    bounds: Bounds | tuple,
    resolution_m: float,
) -> PositionEstimate:
    """
    グリッド全点でコストを評価して最小点を返す。cost は (M, 3) の点群から (M,) を返す関数。
    幅 0 の軸はその値 1 点だけを探索する
    """
    if resolution_m <= 0:
        raise ConfigurationError(f"グリッド分解能は正である必要があります: {resolution_m}")
    lo, hi = (bounds.lo, bounds.hi) if isinstance(bounds, Bounds) else bounds
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi < lo):
        raise ConfigurationError(f"探索範囲が不正です: {lo} .. {hi}")

    counts = np.floor((hi - lo) / resolution_m + 1e-9).astype(np.int64) + 1
    total = int(np.prod(counts.astype(float)))
    if total > MAX_GRID_CELLS:
        raise ConfigurationError(f"グリッドが大きすぎます ({total} セル > {MAX_GRID_CELLS})")

    best_cost, best_point = math.inf, lo.copy()
    for start in range(0, total, GRID_CHUNK):
        flat = np.arange(start, min(start + GRID_CHUNK, total))
        idx = np.stack(np.unravel_index(flat, tuple(counts)), axis=1)
        pts = lo[None, :] + idx * resolution_m
        values = np.asarray(cost(pts), dtype=float)
        i = int(np.argmin(values))
        if values[i] < best_cost:
            best_cost, best_point = float(values[i]), pts[i]

    return PositionEstimate(
        Position.from_array(best_point), EstimatorMethod.BRUTE_FORCE, total, True, math.sqrt(max(best_cost, 0.0))
    )
