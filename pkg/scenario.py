"""
配置シナリオの生成とアンカー選択

座標系は右手系 (z 上向き)、単位はメートル。
レイアウトは高速道路 / 都市グリッド / 屋内工場 / 手書きの固定配置 の 4 種類。
"""

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import Field, model_validator

from clock import ClockState
from errors import ConfigurationError, GeometryError, SelectionError, UsageError
from schema import FrozenModel

KMH = 1.0 / 3.6
RSU_HEIGHT_M = 5.0


# ===============================================
#  基本型
# ===============================================
class NodeRole(str, Enum):
    TARGET_UE = "TargetUe"
    ANCHOR_UE = "AnchorUe"
    RSU = "Rsu"
    BS = "Bs"


ANCHOR_ROLES = (NodeRole.ANCHOR_UE, NodeRole.RSU, NodeRole.BS)


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ConfigurationError(f"座標が有限値ではありません: ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> "Position":
        return cls(float(v[0]), float(v[1]), float(v[2]) if len(v) > 2 else 0.0)

    def distance_to(self, other: "Position") -> float:
        return float(np.linalg.norm(self.as_array() - other.as_array()))


@dataclass(frozen=True)
class Node:
    id: int
    role: NodeRole
    position: Position
    speed: float = 0.0
    heading_rad: float = 0.0
    clock: ClockState = field(default_factory=ClockState)

    def __post_init__(self):
        if self.speed < 0:
            raise ConfigurationError(f"ノード {self.id}: 速度は 0 以上が必要です ({self.speed})")

    def with_clock(self, clock: ClockState) -> "Node":
        return replace(self, clock=clock)


@dataclass(frozen=True)
class Bounds:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p: Position, tol: float = 1e-9) -> bool:
        v = p.as_array()
        return bool(np.all(v >= np.asarray(self.lo) - tol) and np.all(v <= np.asarray(self.hi) + tol))


# ===============================================
#  レイアウト設定
# ===============================================
class HighwayDrop(FrozenModel):
    kind: Literal["HighwayDrop"] = "HighwayDrop"
    num_lanes: int = Field(gt=0)
    lane_width: float = Field(gt=0)
    segment_length: float = Field(gt=0)
    vehicle_density: float = Field(gt=0, le=1)  # 1 車線・1 m あたりの台数
    n_rsus: int = Field(default=0, ge=0)


class UrbanGrid(FrozenModel):
    kind: Literal["UrbanGrid"] = "UrbanGrid"
    block_size: float = Field(gt=0)
    road_width: float = Field(gt=0)
    grid_extent: float = Field(gt=0)
    vehicle_density: float = Field(default=0.02, gt=0, le=1)


class IndoorFactory(FrozenModel):
    kind: Literal["IndoorFactory"] = "IndoorFactory"
    hall_length: float = Field(gt=0)
    hall_width: float = Field(gt=0)
    clutter_density: float = Field(ge=0, le=1)
    ue_density: float = Field(default=0.01, gt=0, le=1)  # 1 m^2 あたり


class NodeSpec(FrozenModel):
    id: int
    role: NodeRole
    x: float
    y: float
    z: float = 0.0
    speed: float = Field(default=0.0, ge=0)
    heading_rad: float = 0.0


class CustomFixed(FrozenModel):
    kind: Literal["CustomFixed"] = "CustomFixed"
    nodes: list[NodeSpec] = Field(min_length=2)

    @model_validator(mode="after")
    def _check_nodes(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("ノード id が重複しています")
        if sum(n.role == NodeRole.TARGET_UE for n in self.nodes) != 1:
            raise ValueError("TargetUe はちょうど 1 台必要です")
        return self


LayoutKind = Annotated[
    Union[HighwayDrop, UrbanGrid, IndoorFactory, CustomFixed], Field(discriminator="kind")
]


class AnchorPolicy(str, Enum):
    NEAREST = "Nearest"
    RANDOM = "Random"
    BEST_GDOP = "BestGdop"


class Dimensionality(str, Enum):
    TWO_D = "TwoD"
    THREE_D = "ThreeD"

    @property
    def n_axes(self) -> int:
        return 2 if self is Dimensionality.TWO_D else 3


class ScenarioConfig(FrozenModel):
    layout: LayoutKind
    n_anchors: int = Field(ge=1)
    anchor_policy: AnchorPolicy = AnchorPolicy.NEAREST
    dimensionality: Dimensionality = Dimensionality.TWO_D
    seed: int = Field(default=0, ge=0, lt=2**64)
    ue_height_m: float = Field(default=1.5, ge=0)
    height_spread_m: float = Field(default=0.0, ge=0)


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[Node, ...]
    bounds: Bounds
    target_id: int
    dimensionality: Dimensionality = Dimensionality.TWO_D
    clutter_density: float = 0.0

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("シナリオ内でノード id が重複しています")

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise ConfigurationError(f"ノード {node_id} はシナリオに存在しません")

    @property
    def target(self) -> Node:
        return self.node(self.target_id)

    def candidates(self, target_id: int | None = None) -> list[Node]:
        tid = self.target_id if target_id is None else target_id
        return [n for n in self.nodes if n.id != tid and n.role in ANCHOR_ROLES]

    def with_nodes(self, nodes) -> "Scenario":
        return replace(self, nodes=tuple(nodes))


# ===============================================
#  シナリオ生成
# ===============================================
def _height(config: ScenarioConfig, rng: np.random.Generator) -> float:
    # 高さのばらつきは 3 次元のときだけ
    if config.dimensionality is Dimensionality.THREE_D and config.height_spread_m > 0:
        return max(0.0, config.ue_height_m + rng.uniform(-config.height_spread_m, config.height_spread_m))
    return config.ue_height_m


def _z_range(config: ScenarioConfig, extra: float = 0.0) -> tuple[float, float]:
    spread = config.height_spread_m if config.dimensionality is Dimensionality.THREE_D else 0.0
    return max(0.0, config.ue_height_m - spread), max(config.ue_height_m + spread, extra)


def _highway(config: ScenarioConfig, layout: HighwayDrop, rng: np.random.Generator):
    L, w = layout.segment_length, layout.lane_width
    width = layout.num_lanes * w
    three_d = config.dimensionality is Dimensionality.THREE_D

    def lane_heading(lane: int) -> float:
        # 下半分の車線は +x 方向、上半分は -x 方向
        return 0.0 if lane < layout.num_lanes / 2 else math.pi

    t_lane = int(rng.integers(layout.num_lanes))
    target = Node(
        id=0,
        role=NodeRole.TARGET_UE,
        position=Position(
            rng.uniform(0.1 * L, 0.9 * L),
            (t_lane + 0.5) * w + rng.uniform(-w / 4, w / 4),
            _height(config, rng),
        ),
        speed=rng.uniform(60, 120) * KMH,
        heading_rad=lane_heading(t_lane),
    )
    nodes = [target]
    per_lane = int(round(layout.vehicle_density * L))
    for lane in range(layout.num_lanes):
        for _ in range(per_lane):
            nodes.append(Node(
                id=len(nodes),
                role=NodeRole.ANCHOR_UE,
                position=Position(
                    rng.uniform(0, L),
                    (lane + 0.5) * w + rng.uniform(-w / 4, w / 4),
                    _height(config, rng),
                ),
                speed=rng.uniform(60, 120) * KMH,
                heading_rad=lane_heading(lane),
            ))
    rsu_z = RSU_HEIGHT_M if three_d else config.ue_height_m
    for i in range(layout.n_rsus):
        nodes.append(Node(
            id=len(nodes),
            role=NodeRole.RSU,
            position=Position((i + 0.5) * L / layout.n_rsus, 0.0, rsu_z),
        ))
    z_lo, z_hi = _z_range(config, rsu_z if layout.n_rsus else 0.0)
    return nodes, Bounds((0.0, 0.0, z_lo), (L, width, z_hi)), 0.0


def _urban_grid(config: ScenarioConfig, layout: UrbanGrid, rng: np.random.Generator):
    E = layout.grid_extent
    half = layout.road_width / 2
    roads = np.arange(0.0, E + 1e-9, layout.block_size)
    interior_roads = roads[(roads >= 0.1 * E) & (roads <= 0.9 * E)]

    def place_on_road(road_coord: float, horizontal: bool, along: float) -> tuple[float, float, float]:
        lateral = float(np.clip(road_coord + rng.uniform(-half, half), 0.0, E))
        heading = (0.0 if horizontal else math.pi / 2) + (math.pi if rng.uniform() < 0.5 else 0.0)
        return (along, lateral, heading) if horizontal else (lateral, along, heading)

    # 目標端末は内部 80% に収まる道路上に置く
    horizontal = bool(rng.uniform() < 0.5)
    along = rng.uniform(0.1 * E, 0.9 * E)
    if interior_roads.size:
        x, y, heading = place_on_road(float(rng.choice(interior_roads)), horizontal, along)
        x, y = float(np.clip(x, 0.1 * E, 0.9 * E)), float(np.clip(y, 0.1 * E, 0.9 * E))
    else:
        x, y, heading = along, rng.uniform(0.1 * E, 0.9 * E), 0.0
    nodes = [Node(0, NodeRole.TARGET_UE, Position(x, y, _height(config, rng)),
                  speed=rng.uniform(0, 60) * KMH, heading_rad=heading)]

    n_vehicles = int(round(layout.vehicle_density * 2 * roads.size * E))
    for _ in range(n_vehicles):
        horizontal = bool(rng.uniform() < 0.5)
        x, y, heading = place_on_road(float(rng.choice(roads)), horizontal, rng.uniform(0, E))
        nodes.append(Node(len(nodes), NodeRole.ANCHOR_UE, Position(x, y, _height(config, rng)),
                          speed=rng.uniform(0, 60) * KMH, heading_rad=heading))
    z_lo, z_hi = _z_range(config)
    return nodes, Bounds((0.0, 0.0, z_lo), (E, E, z_hi)), 0.0


def _indoor_factory(config: ScenarioConfig, layout: IndoorFactory, rng: np.random.Generator):
    L, W = layout.hall_length, layout.hall_width
    nodes = [Node(
        0, NodeRole.TARGET_UE,
        Position(rng.uniform(0.1 * L, 0.9 * L), rng.uniform(0.1 * W, 0.9 * W), _height(config, rng)),
        speed=rng.uniform(0, 3), heading_rad=rng.uniform(-math.pi, math.pi),
    )]
    for _ in range(int(round(layout.ue_density * L * W))):
        nodes.append(Node(
            len(nodes), NodeRole.ANCHOR_UE,
            Position(rng.uniform(0, L), rng.uniform(0, W), _height(config, rng)),
            speed=rng.uniform(0, 3), heading_rad=rng.uniform(-math.pi, math.pi),
        ))
    z_lo, z_hi = _z_range(config)
    return nodes, Bounds((0.0, 0.0, z_lo), (L, W, z_hi)), layout.clutter_density


def _custom_fixed(layout: CustomFixed):
    nodes = [
        Node(s.id, s.role, Position(s.x, s.y, s.z), speed=s.speed, heading_rad=s.heading_rad)
        for s in layout.nodes
    ]
    coords = np.array([n.position.as_array() for n in nodes])
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    return nodes, Bounds(tuple(map(float, lo)), tuple(map(float, hi))), 0.0


def generate(config: ScenarioConfig, rng: np.random.Generator | None = None) -> Scenario:
    """
    設定からシナリオを 1 つ生成する。
    rng を省略した場合は config.seed から乱数列を作るので、同じ設定なら同じ結果になる
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    layout = config.layout
    if isinstance(layout, HighwayDrop):
        nodes, bounds, clutter = _highway(config, layout, rng)
    elif isinstance(layout, UrbanGrid):
        nodes, bounds, clutter = _urban_grid(config, layout, rng)
    elif isinstance(layout, IndoorFactory):
        nodes, bounds, clutter = _indoor_factory(config, layout, rng)
    else:
        nodes, bounds, clutter = _custom_fixed(layout)

    target_id = next(n.id for n in nodes if n.role is NodeRole.TARGET_UE)
    scenario = Scenario(tuple(nodes), bounds, target_id, config.dimensionality, clutter)
    n_candidates = len(scenario.candidates())
    if n_candidates < config.n_anchors:
        raise ConfigurationError(
            f"{layout.kind}: アンカー候補 {n_candidates} 台では n_anchors={config.n_anchors} を配置できません"
        )
    return scenario


# ===============================================
#  GDOP とアンカー選択
# ===============================================
def _geometry_matrix(anchors: np.ndarray, target: np.ndarray) -> np.ndarray:
    v = target[None, :] - anchors
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms < 1e-9):
        raise GeometryError("目標位置がアンカーと一致しています")
    return np.hstack([v / norms[:, None], np.ones((len(anchors), 1))])


def gdop(anchor_positions, target_position, dimensionality: Dimensionality = Dimensionality.TWO_D) -> float:
    """
    単位視線ベクトルに時刻列を加えた H から sqrt(trace((H^T H)^-1)) を計算する。
    2 次元では z 成分を使わない
    """
    d = Dimensionality(dimensionality).n_axes
    anchors = np.array(
        [p.as_array() if isinstance(p, Position) else np.asarray(p, dtype=float) for p in anchor_positions]
    )[:, :d]
    target = (target_position.as_array() if isinstance(target_position, Position)
              else np.asarray(target_position, dtype=float))[:d]
    if len(anchors) < d + 1:
        raise GeometryError(f"{d} 次元の GDOP には {d + 1} 台以上のアンカーが必要です ({len(anchors)} 台)")

    # 共線 (2D) / 共面 (3D) の判定
    s = np.linalg.svd(anchors - anchors.mean(axis=0), compute_uv=False)
    if s[0] == 0 or s[d - 1] / s[0] < 1e-9:
        raise GeometryError("アンカーが共線または共面に並んでいます")

    # 時刻列込みの trace なので、東西南北の単位距離 4 台で中心なら diag(2, 2, 4) から sqrt(1.25)
    H = _geometry_matrix(anchors, target)
    M = H.T @ H
    if np.linalg.matrix_rank(M) < M.shape[0] or np.linalg.cond(M) > 1e12:
        raise GeometryError("H^T H が特異です")
    return float(math.sqrt(np.trace(np.linalg.inv(M))))


def _partial_score(anchors: np.ndarray, target: np.ndarray) -> tuple[int, float]:
    # 階数の高い集合を優先し、同じ階数なら疑似逆行列のトレースが小さい方
    try:
        H = _geometry_matrix(anchors, target)
    except GeometryError:
        return (0, math.inf)
    M = H.T @ H
    return (-int(np.linalg.matrix_rank(H)), float(np.trace(np.linalg.pinv(M))))


def select_anchors(
    scenario: Scenario,
    target_id: int,
    k: int,
    policy: AnchorPolicy = AnchorPolicy.NEAREST,
    rng: np.random.Generator | None = None,
) -> list[int]:
    """測位に参加するアンカーを k 台選んで id のリストを返す"""
    candidates = scenario.candidates(target_id)
    if k < 1 or k > len(candidates):
        raise SelectionError(f"アンカー候補 {len(candidates)} 台から {k} 台は選べません")

    target = scenario.node(target_id).position
    by_distance = sorted(candidates, key=lambda n: (n.position.distance_to(target), n.id))
    policy = AnchorPolicy(policy)

    if policy is AnchorPolicy.NEAREST:
        return [n.id for n in by_distance[:k]]

    if policy is AnchorPolicy.RANDOM:
        if rng is None:
            raise UsageError("Random ポリシーには乱数生成器が必要です")
        picks = rng.choice(len(candidates), size=k, replace=False)
        return [candidates[int(i)].id for i in picks]

    d = scenario.dimensionality.n_axes
    t = target.as_array()[:d]
    chosen = [by_distance[0]]
    remaining = sorted(by_distance[1:], key=lambda n: n.id)
    while len(chosen) < k:
        best, best_score = None, None
        for cand in remaining:
            pts = np.array([n.position.as_array()[:d] for n in chosen + [cand]])
            score = _partial_score(pts, t)
            if len(pts) >= d + 1 and score[0] == -(d + 1):
                try:
                    score = (score[0], gdop(pts, t, scenario.dimensionality) ** 2)
                except GeometryError:
                    score = (0, math.inf)
            if best_score is None or score < best_score:
                best, best_score = cand, score
        chosen.append(best)
        remaining.remove(best)
    return [n.id for n in chosen]


# ===============================================
#  JSON 入出力
# ===============================================
def scenario_to_json(scenario: Scenario) -> str:
    doc = {
        "target_id": scenario.target_id,
        "dimensionality": scenario.dimensionality.value,
        "nodes": [
            {
                "id": n.id, "role": n.role.value,
                "x": n.position.x, "y": n.position.y, "z": n.position.z,
                "speed": n.speed, "heading_rad": n.heading_rad,
            }
            for n in scenario.nodes
        ],
    }
    return json.dumps(doc, ensure_ascii=False, indent=2)


def scenario_from_json(text: str) -> Scenario:
    """手書きのノード一覧 (CustomFixed と同じスキーマ) からシナリオを復元する"""
    doc = json.loads(text)
    layout = CustomFixed(nodes=doc["nodes"])
    nodes, bounds, _ = _custom_fixed(layout)
    target_id = next(n.id for n in nodes if n.role is NodeRole.TARGET_UE)
    return Scenario(tuple(nodes), bounds, target_id, Dimensionality(doc.get("dimensionality", "TwoD")))
