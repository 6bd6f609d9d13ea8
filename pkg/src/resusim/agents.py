"""Team member state and the per-agent decision rules."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .als import AlsState, Drug
from .comms import Message, Performative, ReadbackTracker
from .domain import ActionSpec, AgentProfile, ContentCategory, DurationWeights, Role, clamp

log = logging.getLogger(__name__)

# High to low. Pads sit with the defibrillation work they enable.
PRIORITY = {
    "check_pulse": 9,
    "chest_compressions_30": 8,
    "charge_and_shock": 7,
    "attach_defib_pads": 6,
    "ventilate_x2": 5,
    "inject_drug": 4,
    "prepare_drug": 3,
    "intubate": 2,
    "install_iv": 1,
}

ROTATION_ORDER = (Role.PARAMEDIC1, Role.PARAMEDIC3, Role.PARAMEDIC2, Role.PHYSICIAN)

# Belief written when an agent completes an action successfully.
COMPLETION_BELIEFS = {
    "attach_defib_pads": "pads_attached",
    "install_iv": "iv_installed",
    "intubate": "airway_secured",
}


@dataclass(frozen=True)
class AgentConfig:
    staleness_window: int = 30
    hang_timeout: int = 10
    tiredness_growth: float = 0.02
    duration_weights: DurationWeights = DurationWeights()
    # Chance that a successful adrenaline dose turns asystole/PEA into VF.
    adrenaline_conversion: float = 0.3


@dataclass(slots=True)
class Task:
    action_id: str
    requester: Optional[str] = None
    root: Optional[int] = None  # first transmission of the triggering request
    drug: Optional[str] = None
    condition: Optional[str] = None
    duration: int = 0
    remaining: int = 0
    started: int = -1
    corrupted: bool = False
    held: bool = False  # CPR order waiting for its turn in the 30:2 sequence


@dataclass(slots=True)
class Draft:
    """A message an agent wants to say; ids are assigned when it is spoken."""

    performative: Performative
    receivers: tuple
    content: dict
    category: ContentCategory
    reply_to: Optional[int] = None
    original_id: Optional[int] = None
    attempt: int = 0
    broadcast: bool = False


@dataclass
class AgentRuntime:
    profile: AgentProfile
    tiredness: float = 0.0
    current: Optional[Task] = None
    queue: list = field(default_factory=list)
    waiting: list = field(default_factory=list)  # RequestWhen tasks
    beliefs: dict = field(default_factory=dict)
    inbox: list = field(default_factory=list)
    outbox: deque = field(default_factory=deque)
    tracker: Optional[ReadbackTracker] = None
    id: str = field(init=False)  # copied from the profile; read on every tick

    def __post_init__(self):
        self.id = self.profile.id
        if not self.tiredness:
            self.tiredness = self.profile.tiredness

    @property
    def role(self) -> Role:
        return self.profile.role

    @property
    def busy(self) -> bool:
        return self.current is not None

    @property
    def status(self) -> str:
        if self.current is None:
            return "Available"
        return f"Busy({self.current.action_id}, {self.current.remaining})"

    def believe(self, key: str, value, tick: int) -> None:
        self.beliefs[key] = (value, tick)

    def belief(self, key: str, default=None):
        entry = self.beliefs.get(key)
        return default if entry is None else entry[0]

    def has_task(self, root: int) -> Optional[Task]:
        if self.current is not None and self.current.root == root:
            return self.current
        for task in self.queue:
            if task.root == root:
                return task
        for task in self.waiting:
            if task.root == root:
                return task
        return None

    def task_status(self, action_id: str) -> str:
        if self.current is not None and self.current.action_id == action_id:
            return "in_progress"
        if any(t.action_id == action_id for t in self.queue) or any(
            t.action_id == action_id for t in self.waiting
        ):
            return "queued"
        done = self.beliefs.get(f"done:{action_id}")
        return "done" if done else "unknown"


@dataclass
class Outstanding:
    """A directive the leader has issued and is waiting to see closed."""

    root: int
    kind: str
    action_id: str
    target: str
    issued: int
    drug: Optional[str] = None
    acked: bool = False
    # Set when a matching read-back proved the directive was understood.
    verified: bool = False
    last_query: int = -1


@dataclass
class LeaderRuntime(AgentRuntime):
    als: AlsState = field(default_factory=AlsState)
    outstanding: dict = field(default_factory=dict)
    drug_queue: list = field(default_factory=list)
    active_drug: Optional[Drug] = None
    compressor: Optional[str] = None
    pulse_report: Optional[bool] = None
    shock_delivered: bool = False


def parse_condition(text) -> tuple:
    """Parse ``key`` or ``key=value``. Raises ValueError when malformed."""
    if not isinstance(text, str) or not text or text.count("=") > 1:
        raise ValueError(f"malformed condition {text!r}")
    key, _, value = text.partition("=")
    if not key.isidentifier():
        raise ValueError(f"malformed condition {text!r}")
    return key, (value if value else None)


def condition_holds(agent: AgentRuntime, condition: str) -> bool:
    key, value = parse_condition(condition)
    current = agent.belief(key)
    if value is None:
        return bool(current)
    return current == value


def perceive(agent: AgentRuntime, heard: list, own_completions: list, tick: int) -> AgentRuntime:
    """Fold what the agent heard and finished this tick into its beliefs.

    ``heard`` holds (message, content as understood) pairs; misheard content
    is already corrupted and is believed as such.
    """
    for msg, content in heard:
        agent.inbox.append((msg, content))
        if msg.performative in (Performative.INFORM, Performative.CONFIRM) and "info" in content:
            agent.believe(content["info"], content.get("value"), tick)
    for task, success in own_completions:
        if success:
            agent.believe(f"done:{task.action_id}", True, tick)
            key = COMPLETION_BELIEFS.get(task.action_id)
            if key:
                agent.believe(key, True, tick)
            if task.action_id == "prepare_drug":
                agent.believe("drug_prepared", task.drug, tick)
            elif task.action_id == "inject_drug":
                agent.believe("drug_prepared", None, tick)
                agent.believe("drug_given", task.drug, tick)
    return agent


def _reply(msg: Message, performative: Performative, content: dict) -> Draft:
    return Draft(performative, (msg.sender,), content, msg.category, reply_to=msg.msg_id)


def handle_request(
    agent: AgentRuntime, msg: Message, content: dict, catalog: dict, send_agree: bool = True
) -> tuple:
    """Decide how to answer a request as understood.

    Returns (reply draft or None, task or None). The caller schedules the
    task; RequestWhen tasks come back with their condition set.
    """
    action = content.get("action")
    spec: Optional[ActionSpec] = catalog.get(action)
    if spec is None or (action in ("prepare_drug", "inject_drug") and not content.get("drug")):
        return _reply(msg, Performative.NOT_UNDERSTOOD, {"repeat": msg.msg_id}), None
    if not spec.permits(agent.role):
        return _reply(msg, Performative.REFUSE, {"action": action, "reason": "role"}), None
    condition = None
    if msg.performative is Performative.REQUEST_WHEN:
        condition = content.get("when")
        try:
            parse_condition(condition)
        except ValueError:
            return _reply(msg, Performative.NOT_UNDERSTOOD, {"repeat": msg.msg_id}), None
    task = Task(action, requester=msg.sender, root=msg.root_id, drug=content.get("drug"), condition=condition)
    reply = None
    if send_agree:
        agree = {"action": action}
        if agent.busy and not can_preempt(agent, action, catalog):
            agree["deferred"] = True
        reply = _reply(msg, Performative.AGREE, agree)
    return reply, task


def can_preempt(agent: AgentRuntime, action_id: str, catalog: dict) -> bool:
    cur = agent.current
    if cur is None:
        return True
    return catalog[cur.action_id].interruptible and PRIORITY.get(action_id, 0) > PRIORITY.get(cur.action_id, 0)


def runnable(agent: AgentRuntime, task: Task) -> bool:
    if task.action_id == "inject_drug" and not agent.belief("iv_installed"):
        return False
    if task.held:
        return False
    return True


def next_task(agent: AgentRuntime) -> Optional[Task]:
    """Pop the highest-priority runnable queued task (FIFO among equals)."""
    best, best_p = None, -1
    for i, task in enumerate(agent.queue):
        p = PRIORITY.get(task.action_id, 0)
        if p > best_p and runnable(agent, task):
            best, best_p = i, p
    if best is None:
        return None
    return agent.queue.pop(best)


def release_waiting(agent: AgentRuntime) -> list:
    """Move RequestWhen tasks whose condition now holds onto the queue."""
    fired = [t for t in agent.waiting if condition_holds(agent, t.condition)]
    if fired:
        agent.waiting = [t for t in agent.waiting if t not in fired]
        agent.queue.extend(fired)
    return fired


def decide(agent: AgentRuntime, tick: int) -> list:
    """Intents for a non-leader this tick: ``("start", task)`` when free."""
    release_waiting(agent)
    if agent.busy:
        return []
    task = next_task(agent)
    return [] if task is None else [("start", task)]


def add_tiredness(agent: AgentRuntime, amount: float) -> None:
    agent.tiredness = clamp(agent.tiredness + amount, 0.0, 1.0)


def rotate_compressor(team: list, current: Optional[str], tick: int, exclude=()) -> str:
    """Hand compressions to the least-tired eligible agent other than ``current``."""
    order = {role: i for i, role in enumerate(ROTATION_ORDER)}
    candidates = [a for a in team if a.id != current and a.id not in exclude]
    if not candidates:
        log.warning("tick %d: no one to take over compressions from %s", tick, current)
        return current
    best = min(candidates, key=lambda a: (a.tiredness, order[a.role]))
    return best.id
