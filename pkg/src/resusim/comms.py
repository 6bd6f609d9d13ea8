"""Spoken-message channel: performatives, mishearing and the compared protocols."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Optional, Sequence, Union

from .domain import ContentCategory, clamp


class ProtocolMisuse(RuntimeError):
    """A protocol operation was requested under a variant that does not use it."""


class Performative(str, enum.Enum):
    REQUEST = "Request"
    REQUEST_WHEN = "RequestWhen"
    QUERY_REF = "QueryRef"
    INFORM = "Inform"
    CONFIRM = "Confirm"
    AGREE = "Agree"
    REFUSE = "Refuse"
    FAILURE = "Failure"
    NOT_UNDERSTOOD = "NotUnderstood"


class FipaCategory(str, enum.Enum):
    PERF_ACTIONS = "PerfActions"
    REQUEST_INFO = "RequestInfo"
    PASSING_INFO = "PassingInfo"
    ERROR_HAND = "ErrorHand"


_FIPA_CATEGORY = {
    Performative.REQUEST: FipaCategory.PERF_ACTIONS,
    Performative.REQUEST_WHEN: FipaCategory.PERF_ACTIONS,
    Performative.AGREE: FipaCategory.PERF_ACTIONS,
    Performative.REFUSE: FipaCategory.PERF_ACTIONS,
    Performative.QUERY_REF: FipaCategory.REQUEST_INFO,
    Performative.INFORM: FipaCategory.PASSING_INFO,
    Performative.CONFIRM: FipaCategory.PASSING_INFO,
    Performative.FAILURE: FipaCategory.ERROR_HAND,
    Performative.NOT_UNDERSTOOD: FipaCategory.ERROR_HAND,
}

# Performatives whose directed use needs a read-back under closed loop.
ACKED_PERFORMATIVES = frozenset(
    {Performative.REQUEST, Performative.REQUEST_WHEN, Performative.INFORM}
)


def fipa_category(p: Performative) -> FipaCategory:
    return _FIPA_CATEGORY[Performative(p)]


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    CLOSED_LOOP = "closed_loop"
    LEADER_MEDIATED = "leader_mediated"
    CLOSED_LOOP_LEADER_MEDIATED = "closed_loop_leader_mediated"

    @property
    def closed_loop(self) -> bool:
        return self in (Variant.CLOSED_LOOP, Variant.CLOSED_LOOP_LEADER_MEDIATED)

    @property
    def leader_mediated(self) -> bool:
        return self in (Variant.LEADER_MEDIATED, Variant.CLOSED_LOOP_LEADER_MEDIATED)


@dataclass(frozen=True)
class ProtocolConfig:
    variant: Variant = Variant.BASELINE
    base_mishear: float = 0.08
    noise_coefficient: float = 0.15
    familiarity_bonus: float = 0.5
    ack_timeout: int = 4
    max_retransmits: int = 3
    # Probability that a misheard request is acted on as heard instead of
    # being queried back.
    misheard_execution_risk: float = 0.5
    # Whether read-backs and repair requests go through the mishear model.
    acks_can_be_misheard: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))


class Delivery(str, enum.Enum):
    HEARD = "heard"
    MISHEARD = "misheard"
    UNHEARD = "unheard"


class DeliveryOutcome(NamedTuple):
    listener: str
    result: Delivery
    overheard: bool = False


@dataclass(frozen=True, slots=True)
class Message:
    msg_id: int
    sender: str
    receivers: tuple
    performative: Performative
    content: dict
    category: ContentCategory
    reply_to: Optional[int] = None
    tick_sent: int = 0
    # Retransmissions point back at the first transmission of the same content.
    original_id: Optional[int] = None
    attempt: int = 0
    broadcast: bool = False

    def __post_init__(self):
        if not self.receivers:
            raise ValueError("message needs at least one receiver")
        if self.sender in self.receivers:
            raise ValueError("sender cannot be a receiver")
        if self.performative in (Performative.CONFIRM, Performative.NOT_UNDERSTOOD) and self.reply_to is None:
            raise ValueError(f"{self.performative.value} must carry reply_to")

    @property
    def root_id(self) -> int:
        return self.msg_id if self.original_id is None else self.original_id

    @property
    def directed(self) -> bool:
        return not self.broadcast


def mishear_probability(speakers: int, familiarity: float, cfg: ProtocolConfig) -> float:
    p = cfg.base_mishear * (1.0 - cfg.familiarity_bonus * familiarity)
    p += cfg.noise_coefficient * (speakers - 1)
    return clamp(p, 0.0, 0.95)


def deliver(
    msg: Message,
    speakers_this_tick: int,
    familiarity: Union[float, Mapping[str, float]],
    cfg: ProtocolConfig,
    rng: random.Random,
    listeners: Optional[Sequence[str]] = None,
) -> list:
    """Roll one outcome per listener.

    ``listeners`` defaults to the addressed receivers; the engine passes the
    whole co-located team so non-addressed members can overhear. One uniform
    draw per listener decides the outcome, the bad region split evenly
    between misheard and unheard.
    """
    if speakers_this_tick < 1:
        raise ValueError("speakers_this_tick must be >= 1")
    if listeners is None:
        listeners = msg.receivers
    addressed = set(msg.receivers)
    out = []
    for listener in listeners:
        fam = familiarity if isinstance(familiarity, (int, float)) else familiarity.get(listener, 0.0)
        p_bad = mishear_probability(speakers_this_tick, fam, cfg)
        u = rng.random()
        if u < p_bad * 0.5:
            result = Delivery.MISHEARD
        elif u < p_bad:
            result = Delivery.UNHEARD
        else:
            result = Delivery.HEARD
        out.append(DeliveryOutcome(listener, result, overheard=listener not in addressed))
    return out


_BOOL_FLIP = {True: False, False: True}


def corrupt_content(content: dict, rng: random.Random, action_ids: Sequence[str]) -> dict:
    """Garble a payload the way a listener might misunderstand it.

    Action payloads swap to a uniformly chosen different action id; info
    payloads get a wrong value.
    """
    garbled = dict(content)
    if "action" in content:
        others = [a for a in action_ids if a != content["action"]]
        garbled["action"] = others[rng.randrange(len(others))]
    elif "value" in content:
        value = content["value"]
        if isinstance(value, bool):
            garbled["value"] = _BOOL_FLIP[value]
        else:
            garbled["value"] = "?"
            rng.random()  # keep draw count uniform across payload types
    elif "query" in content:
        garbled["query"] = "?"
        rng.random()
    return garbled


def closed_loop_exchange(
    original: Message,
    outcome: DeliveryOutcome,
    rng: random.Random,
    cfg: ProtocolConfig,
    ids: Iterator[int],
    tick: int,
    heard_content: Optional[dict] = None,
    action_ids: Sequence[str] = (),
) -> list:
    """Receiver half of a read-back: what the intended listener says back.

    ``heard_content`` is what the listener actually understood; if omitted
    for a misheard delivery it is corrupted here.
    """
    if not cfg.variant.closed_loop:
        raise ProtocolMisuse(f"read-back requested under {cfg.variant.value}")
    if outcome.result is Delivery.UNHEARD or outcome.overheard:
        return []
    if outcome.result is Delivery.MISHEARD and heard_content is None:
        heard_content = corrupt_content(original.content, rng, action_ids)
    echo = original.content if outcome.result is Delivery.HEARD else heard_content
    confirm = Message(
        msg_id=next(ids),
        sender=outcome.listener,
        receivers=(original.sender,),
        performative=Performative.CONFIRM,
        content=dict(echo),
        category=original.category,
        reply_to=original.msg_id,
        tick_sent=tick,
    )
    return [confirm]


def baseline_mishear_response(
    original: Message, outcome: DeliveryOutcome, ids: Iterator[int], tick: int
) -> Optional[Message]:
    """Ask for a repeat when a directed message was garbled; nothing otherwise."""
    if outcome.result is not Delivery.MISHEARD or outcome.overheard:
        return None
    return Message(
        msg_id=next(ids),
        sender=outcome.listener,
        receivers=(original.sender,),
        performative=Performative.NOT_UNDERSTOOD,
        content={"repeat": original.msg_id},
        category=original.category,
        reply_to=original.msg_id,
        tick_sent=tick,
    )


@dataclass
class _Pending:
    message: Message
    sent_tick: int
    retransmits: int = 0


@dataclass
class ReadbackTracker:
    """Sender half of the read-back loop.

    Tracks directed messages awaiting a matching echo. A mismatching echo
    schedules an immediate retransmission; silence schedules one after
    ``ack_timeout``. After ``max_retransmits`` retransmissions the message is
    reported as failed.
    """

    cfg: ProtocolConfig
    pending: dict = field(default_factory=dict)

    def register(self, msg: Message, tick: int, retransmits: int = 0) -> None:
        self.pending[msg.root_id] = _Pending(msg, tick, retransmits)

    def on_confirm(self, confirm: Message, tick: int, heard_content: Optional[dict] = None) -> Optional[bool]:
        """True if the echo matches, False on mismatch, None if unknown.

        ``heard_content`` is the echo as the sender understood it.
        """
        echo = confirm.content if heard_content is None else heard_content
        for root, entry in self.pending.items():
            if entry.message.msg_id == confirm.reply_to:
                if echo == entry.message.content:
                    del self.pending[root]
                    return True
                # Force the retransmission on the next poll.
                entry.sent_tick = tick - self.cfg.ack_timeout
                return False
        return None

    def expedite(self, root_id: int, tick: int) -> bool:
        """Make a pending message due now; False if it is not pending."""
        entry = self.pending.get(root_id)
        if entry is None:
            return False
        entry.sent_tick = min(entry.sent_tick, tick - self.cfg.ack_timeout)
        return True

    def due(self, tick: int) -> tuple:
        """Return (to_retransmit, failed) originals whose timers have run out."""
        resend, failed = [], []
        for root in list(self.pending):
            entry = self.pending[root]
            if tick - entry.sent_tick >= self.cfg.ack_timeout:
                if entry.retransmits >= self.cfg.max_retransmits:
                    failed.append(entry.message)
                    del self.pending[root]
                else:
                    resend.append(entry)
        return resend, failed

    def next_deadline(self) -> Optional[int]:
        if not self.pending:
            return None
        return min(e.sent_tick for e in self.pending.values()) + self.cfg.ack_timeout

    def cancel(self, root_id: int) -> None:
        self.pending.pop(root_id, None)


def arbitrate_speakers(
    pending: Sequence[tuple],
    cfg: ProtocolConfig,
    leader_id: str = "phy",
) -> tuple:
    """Decide who gets to talk this tick.

    ``pending`` holds (agent_id, Message) heads in FIFO order. Without leader
    mediation everyone talks at once. With it the leader goes first, replies
    are always allowed, and at most one other speaker opens a new topic,
    only when the leader is silent.
    """
    if not cfg.variant.leader_mediated:
        return list(pending), []
    granted, deferred = [], []
    leader_talking = any(agent == leader_id for agent, _ in pending)
    opened = False
    for agent, msg in pending:
        if agent == leader_id or msg.reply_to is not None:
            granted.append((agent, msg))
        elif not leader_talking and not opened:
            granted.append((agent, msg))
            opened = True
        else:
            deferred.append((agent, msg))
    return granted, deferred
