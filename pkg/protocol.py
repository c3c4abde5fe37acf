"""
測位セッションの状態機械 (NSL MT-LR / NSL MO-LR / USL)

遷移表は (状態, イベント種別) → 次状態 の辞書で持つ。
1 回の step で 1 段進み、送出メッセージをトレースに積み、遅延を加算する。
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from pydantic import Field, field_validator

from errors import ConfigurationError, ProtocolError, SessionStateError
from estimators import EstimatorMethod
from measurement import RttKind
from schema import FrozenModel


class EntityKind(str, Enum):
    TARGET_UE = "TargetUe"
    ANCHOR_UE = "AnchorUe"
    AMF = "Amf"
    LMF = "Lmf"
    GMLC = "Gmlc"
    SL_SERVER = "SlServer"


CORE_ENTITIES = (EntityKind.AMF, EntityKind.LMF, EntityKind.GMLC)


class SessionKind(str, Enum):
    NSL_MT_LR = "NslMtLr"
    NSL_MO_LR = "NslMoLr"
    USL = "Usl"

    @property
    def network_involved(self) -> bool:
        return self is not SessionKind.USL


class SessionState(str, Enum):
    IDLE = "Idle"
    REQUESTED = "Requested"
    PRIVACY_CHECK = "PrivacyCheck"
    ANCHOR_SELECTION = "AnchorSelection"
    CAPABILITY_EXCHANGE = "CapabilityExchange"
    ASSISTANCE_REQUESTED = "AssistanceRequested"
    ASSISTANCE_DELIVERED = "AssistanceDelivered"
    MEASURING = "Measuring"
    COMPUTING = "Computing"
    REPORTED = "Reported"
    FAILED = "Failed"


TERMINAL_STATES = (SessionState.REPORTED, SessionState.FAILED)


class MessageKind(str, Enum):
    REQUEST = "Request"
    PRIVACY_QUERY = "PrivacyQuery"
    ANCHOR_INVITE = "AnchorInvite"
    CAPABILITY_INFO = "CapabilityInfo"
    ASSISTANCE_REQUEST = "AssistanceRequest"
    ASSISTANCE_DATA = "AssistanceData"
    PRS_EXCHANGE = "PrsExchange"
    RESULT = "Result"


DEFAULT_MESSAGE_DELAY_S = {
    MessageKind.REQUEST: 5e-3,
    MessageKind.PRIVACY_QUERY: 10e-3,
    MessageKind.ANCHOR_INVITE: 2e-3,
    MessageKind.CAPABILITY_INFO: 2e-3,
    MessageKind.ASSISTANCE_REQUEST: 5e-3,
    MessageKind.ASSISTANCE_DATA: 5e-3,
    MessageKind.PRS_EXCHANGE: 1e-3,
    MessageKind.RESULT: 5e-3,
}


class ProtocolDelays(FrozenModel):
    """メッセージ種別ごとの伝送遅延と、段ごとの処理時間 (いずれも秒)"""
    message_delay_s: dict[MessageKind, float] = Field(default_factory=lambda: dict(DEFAULT_MESSAGE_DELAY_S))
    stage_processing_s: dict[SessionState, float] = Field(
        default_factory=lambda: {SessionState.COMPUTING: 5e-3}
    )

    @field_validator("message_delay_s", "stage_processing_s")
    @classmethod
    def _non_negative(cls, v):
        bad = {str(k): x for k, x in v.items() if x < 0}
        if bad:
            raise ValueError(f"遅延は 0 以上が必要です: {bad}")
        return v

    def delay(self, kind: MessageKind) -> float:
        return self.message_delay_s.get(kind, DEFAULT_MESSAGE_DELAY_S[kind])

    def processing(self, state: SessionState) -> float:
        return self.stage_processing_s.get(state, 0.0)

    @classmethod
    def uniform(cls, per_message_s: float) -> "ProtocolDelays":
        return cls(message_delay_s={k: per_message_s for k in MessageKind}, stage_processing_s={})


@dataclass(frozen=True)
class Message:
    seq: int
    sender: EntityKind
    receiver: EntityKind
    kind: MessageKind
    delay_s: float
    cumulative_latency_s: float


@dataclass(frozen=True)
class CapabilityPayload:
    supported_methods: tuple[EstimatorMethod, ...]
    n_antennas: int
    bandwidth_hz: float
    computation_power: int = 0  # 中身は見ない


# ===============================================
#  イベント
# ===============================================
@dataclass(frozen=True)
class CheckPrivacy:
    pass


@dataclass(frozen=True)
class SelectAnchors:
    pass


@dataclass(frozen=True)
class ExchangeCapabilities:
    payloads: tuple[CapabilityPayload, ...] = ()


@dataclass(frozen=True)
class RequestAssistance:
    pass


@dataclass(frozen=True)
class DeliverAssistance:
    pass


@dataclass(frozen=True)
class Measure:
    n_prs: int


@dataclass(frozen=True)
class Compute:
    pass


@dataclass(frozen=True)
class Report:
    pass


@dataclass(frozen=True)
class Drop:
    pass


_TRANSITIONS = {
    (SessionState.REQUESTED, CheckPrivacy): SessionState.PRIVACY_CHECK,
    (SessionState.REQUESTED, SelectAnchors): SessionState.ANCHOR_SELECTION,
    (SessionState.PRIVACY_CHECK, SelectAnchors): SessionState.ANCHOR_SELECTION,
    (SessionState.ANCHOR_SELECTION, ExchangeCapabilities): SessionState.CAPABILITY_EXCHANGE,
    (SessionState.CAPABILITY_EXCHANGE, RequestAssistance): SessionState.ASSISTANCE_REQUESTED,
    (SessionState.ASSISTANCE_REQUESTED, DeliverAssistance): SessionState.ASSISTANCE_DELIVERED,
    (SessionState.ASSISTANCE_DELIVERED, Measure): SessionState.MEASURING,
    (SessionState.CAPABILITY_EXCHANGE, Measure): SessionState.MEASURING,
    (SessionState.MEASURING, Compute): SessionState.COMPUTING,
    (SessionState.COMPUTING, Report): SessionState.REPORTED,
}


def _legal(kind: SessionKind, state: SessionState, event) -> SessionState | None:
    if isinstance(event, Drop):
        return None if state in TERMINAL_STATES else SessionState.FAILED
    nxt = _TRANSITIONS.get((state, type(event)))
    if nxt is None:
        return None
    # MO-LR だけはプライバシー確認を経由する
    if kind is SessionKind.NSL_MO_LR and (state, type(event)) == (SessionState.REQUESTED, SelectAnchors):
        return None
    if kind is not SessionKind.NSL_MO_LR and isinstance(event, CheckPrivacy):
        return None
    # LMF からの支援データは NSL のみ。USL は能力交換の直後に測定へ進む
    if not kind.network_involved and isinstance(event, (RequestAssistance, DeliverAssistance)):
        return None
    if kind.network_involved and (state, type(event)) == (SessionState.CAPABILITY_EXCHANGE, Measure):
        return None
    return nxt


@dataclass(frozen=True)
class Session:
    kind: SessionKind
    participants: tuple[EntityKind, ...]
    state: SessionState = SessionState.REQUESTED
    trace: tuple[Message, ...] = ()
    latency_s: float = 0.0
    capabilities: tuple[CapabilityPayload, ...] = field(default=())

    @property
    def n_anchors(self) -> int:
        return sum(p is EntityKind.ANCHOR_UE for p in self.participants)

    @property
    def server(self) -> EntityKind:
        return EntityKind.LMF if self.kind.network_involved else EntityKind.SL_SERVER


def start(kind: SessionKind, participants: Iterable[EntityKind]) -> Session:
    kind = SessionKind(kind)
    parts = tuple(EntityKind(p) for p in participants)
    if EntityKind.TARGET_UE not in parts:
        raise ConfigurationError("TargetUe が参加していません")
    if EntityKind.ANCHOR_UE not in parts:
        raise ConfigurationError("AnchorUe が 1 台も参加していません")
    if kind.network_involved:
        missing = [e.value for e in (EntityKind.AMF, EntityKind.LMF) if e not in parts]
        if kind is SessionKind.NSL_MO_LR and EntityKind.GMLC not in parts:
            missing.append(EntityKind.GMLC.value)
        if missing:
            raise ConfigurationError(f"{kind.value} に必要なエンティティがありません: {missing}")
    else:
        if EntityKind.SL_SERVER not in parts:
            raise ConfigurationError("Usl には SlServer が必要です")
        core = sorted({p.value for p in parts if p in CORE_ENTITIES})
        if core:
            raise ConfigurationError(f"Usl にコアネットワークのエンティティは参加できません: {core}")
    return Session(kind, parts)


def _messages_for(session: Session, event) -> list[tuple[EntityKind, EntityKind, MessageKind]]:
    T, A = EntityKind.TARGET_UE, EntityKind.ANCHOR_UE
    server = session.server
    n = session.n_anchors
    if isinstance(event, CheckPrivacy):
        return [(EntityKind.AMF, EntityKind.GMLC, MessageKind.PRIVACY_QUERY)]
    if isinstance(event, SelectAnchors):
        first = (EntityKind.AMF, EntityKind.LMF) if session.kind.network_involved else (T, server)
        return [(*first, MessageKind.REQUEST)] + [(T, A, MessageKind.ANCHOR_INVITE)] * n
    if isinstance(event, ExchangeCapabilities):
        return [(A, T, MessageKind.CAPABILITY_INFO)] * n + [(T, server, MessageKind.CAPABILITY_INFO)]
    if isinstance(event, RequestAssistance):
        return [(T, EntityKind.LMF, MessageKind.ASSISTANCE_REQUEST)]
    if isinstance(event, DeliverAssistance):
        return [(EntityKind.LMF, T, MessageKind.ASSISTANCE_DATA)]
    if isinstance(event, Measure):
        return [(A, T, MessageKind.PRS_EXCHANGE)] * event.n_prs
    if isinstance(event, Compute):
        return [(T, server, MessageKind.RESULT)]
    if isinstance(event, Report):
        if session.kind is SessionKind.NSL_MT_LR:
            return [(EntityKind.LMF, EntityKind.AMF, MessageKind.RESULT)]
        return [(server, T, MessageKind.RESULT)]
    return []


def step(session: Session, event, delays: ProtocolDelays | None = None) -> tuple[Session, tuple[Message, ...]]:
    """1 段進めて (新しいセッション, 送出メッセージ) を返す"""
    delays = delays or ProtocolDelays()
    nxt = _legal(session.kind, session.state, event)
    if nxt is None:
        raise ProtocolError(session.state.value, type(event).__name__)
    if isinstance(event, Measure) and event.n_prs < 1:
        raise ConfigurationError(f"PRS 送信回数は 1 以上が必要です: {event.n_prs}")

    latency = session.latency_s + delays.processing(nxt)
    emitted = []
    for sender, receiver, kind in _messages_for(session, event):
        d = delays.delay(kind)
        latency += d
        emitted.append(Message(len(session.trace) + len(emitted), sender, receiver, kind, d, latency))

    updates = dict(state=nxt, trace=session.trace + tuple(emitted), latency_s=latency)
    if isinstance(event, ExchangeCapabilities):
        updates["capabilities"] = event.payloads
    return replace(session, **updates), tuple(emitted)


def session_latency_s(session: Session) -> float:
    if session.state not in TERMINAL_STATES:
        raise SessionStateError(f"セッションは進行中です (状態 {session.state.value})")
    return session.latency_s


# ===============================================
#  補助関数
# ===============================================
def prs_transmission_count(method: EstimatorMethod, rtt_kind: RttKind, n_anchors: int) -> int:
    """
    1 セッションの SL-PRS 送信回数。
    RTT は 1 ペアにつき片側 2 回 / 両側 3 回、TDoA・ToA はアンカー数、AoA は 1 ペア 1 回。
    ハイブリッドは 1 アンカーとの RTT 交換が AoA も兼ねる
    """
    method = EstimatorMethod(method)
    per_rtt = 2 if RttKind(rtt_kind) is RttKind.SINGLE_SIDED else 3
    if method is EstimatorMethod.RTT_MULTILAT:
        return per_rtt * n_anchors
    if method in (EstimatorMethod.TDOA, EstimatorMethod.TOA_MULTILAT, EstimatorMethod.AOA_TRIANG):
        return n_anchors
    if method is EstimatorMethod.HYBRID_RTT_AOA:
        return per_rtt
    raise ConfigurationError(f"{method.value} には PRS 送信回数が定義されていません")


def default_participants(kind: SessionKind, n_anchors: int) -> list[EntityKind]:
    parts = [EntityKind.TARGET_UE] + [EntityKind.ANCHOR_UE] * n_anchors
    kind = SessionKind(kind)
    if kind is SessionKind.USL:
        return parts + [EntityKind.SL_SERVER]
    parts += [EntityKind.AMF, EntityKind.LMF]
    if kind is SessionKind.NSL_MO_LR:
        parts.append(EntityKind.GMLC)
    return parts


def happy_path_events(kind: SessionKind, n_prs: int, capabilities: tuple[CapabilityPayload, ...] = ()) -> list:
    kind = SessionKind(kind)
    events = [CheckPrivacy()] if kind is SessionKind.NSL_MO_LR else []
    events += [SelectAnchors(), ExchangeCapabilities(capabilities)]
    if kind.network_involved:
        events += [RequestAssistance(), DeliverAssistance()]
    events += [Measure(n_prs), Compute(), Report()]
    return events


def run_session(
    kind: SessionKind,
    method: EstimatorMethod,
    rtt_kind: RttKind,
    n_anchors: int,
    delays: ProtocolDelays | None = None,
) -> Session:
    """正常系の全段を流したセッションを返す"""
    session = start(kind, default_participants(kind, n_anchors))
    for ev in happy_path_events(kind, prs_transmission_count(method, rtt_kind, n_anchors)):
        session, _ = step(session, ev, delays)
    return session


def trace_to_jsonl(session: Session) -> str:
    lines = [
        json.dumps({
            "seq": m.seq,
            "from": m.sender.value,
            "to": m.receiver.value,
            "kind": m.kind.value,
            "cumulative_latency_s": m.cumulative_latency_s,
        })
        for m in session.trace
    ]
    return "\n".join(lines) + ("\n" if lines else "")
