"""One-second tick simulation loop and the Monte Carlo batch runner."""

from __future__ import annotations

import functools
import itertools
import json
import logging
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from . import als as A
from .agents import (
    PRIORITY,
    AgentRuntime,
    LeaderRuntime,
    Outstanding,
    Task,
    add_tiredness,
    can_preempt,
    condition_holds,
    decide,
    handle_request,
    parse_condition,
    perceive,
    release_waiting,
    rotate_compressor,
    runnable,
)
from .comms import (
    ACKED_PERFORMATIVES,
    Delivery,
    DeliveryOutcome,
    Message,
    Performative,
    ReadbackTracker,
    arbitrate_speakers,
    baseline_mishear_response,
    closed_loop_exchange,
    corrupt_content,
    fipa_category,
    mishear_probability,
)
from .domain import (
    IntegrityFault,
    ROLE_ORDER,
    ContentCategory,
    PatientState,
    RhythmKind,
    RhythmState,
    Role,
    sample_duration,
    success_probability,
)
from .kernels import advance_patient
from .scenario import PatientDynamics, ScenarioConfig, ScenarioError, validate_scenario

log = logging.getLogger(__name__)

EVENT_FIELDS = ("tick", "event_type", "actor", "target", "performative", "category",
                "content", "reply_to", "outcome", "msg_id")

CPR_ACTIONS = ("chest_compressions_30", "ventilate_x2")

# Inform keys that report a finished directive, and the action they close.
INFO_CLOSES = {
    "pads_attached": "attach_defib_pads",
    "iv_installed": "install_iv",
    "airway_secured": "intubate",
    "drug_prepared": "prepare_drug",
    "drug_given": "inject_drug",
    "pulse": "check_pulse",
}
REPORT_KEYS = {v: k for k, v in INFO_CLOSES.items()}

# Directives that are finished as soon as the receiver has acknowledged them.
ACK_CLOSES = frozenset(CPR_ACTIONS)

# Members who never take compression duty at rotation.
NON_COMPRESSOR_ROLES = (Role.PHYSICIAN, Role.PARAMEDIC2)

TICK_LIMIT = "TickLimit"
# Phases that only change on speech or a finished action, both of which
# already force a wake.
_PASSIVE_PHASES = frozenset({A.Phase.TERMINATED, A.Phase.CHARGING, A.Phase.POST_SHOCK_PULSE_CHECK})


@dataclass
class RunResult:
    outcome: str
    total_seconds: int
    no_flow_seconds: int
    message_counts: dict
    category_counts: dict
    error_events: int
    seed: int
    failure_events: int = 0
    hung_directives: int = 0
    total_messages: int = 0
    shocks: int = 0
    drugs_given: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def update_patient(patient: PatientState, flow: bool, dynamics: PatientDynamics) -> PatientState:
    """One second of the abstract physiology."""
    health, co2, zero_at = advance_patient(
        patient.health, patient.co2, patient.pulse_present, flow, 1,
        dynamics.d_noflow, dynamics.d_cpr, dynamics.r_rosc,
        dynamics.co2_rate, dynamics.co2_flow_target, dynamics.co2_noflow_target,
    )
    rhythm = patient.rhythm
    if health == 0.0 and rhythm.kind is not RhythmKind.ASYSTOLE:
        rhythm = RhythmState(RhythmKind.ASYSTOLE, 0)
    return replace(patient, health=health, co2=co2, rhythm=rhythm)


class Simulation:
    """A single seeded run. Not thread-safe; one instance per run."""

    def __init__(self, scenario: ScenarioConfig, seed: int, skip_quiet: bool = True,
                 record_events: bool = True):
        self.sc = scenario
        self.seed = seed
        self.skip_quiet = skip_quiet
        # Speech noise has its own stream, and so does each clinical process
        # (one per action kind, plus drug response), so arms that differ
        # only in protocol still see the same n-th shock roll.
        self.rng = random.Random(seed)
        self._streams = {}
        self.ids = itertools.count(1)
        self.cfg = scenario.protocol
        self.closed_loop = self.cfg.variant.closed_loop
        self.leader_mediated = self.cfg.variant.leader_mediated
        self.catalog = scenario.catalog
        self.action_ids = sorted(self.catalog)
        self.acfg = scenario.agents
        self.events = []
        self.record_events = record_events
        if not record_events:
            # Batch runs only need the counters.
            self.emit = _no_emit

        by_role = {p.role: p for p in scenario.team}
        self.team = []
        for role in ROLE_ORDER:
            prof = by_role[role]
            agent = (LeaderRuntime if role is Role.PHYSICIAN else AgentRuntime)(prof)
            if self.closed_loop:
                agent.tracker = ReadbackTracker(self.cfg)
            self.team.append(agent)
        self.leader = self.team[0]
        self.members = tuple(self.team[1:])
        self.by_id = {a.id: a for a in self.team}
        self.listeners = {a.id: tuple(b.id for b in self.team if b is not a) for a in self.team}
        self.by_role = {a.role: a for a in self.team}
        # familiarity[sender][listener]: how well the listener knows the speaker.
        self.familiarity = {
            s.id: {l.id: l.profile.familiarity.get(s.id, 0.0) for l in self.team if l is not s}
            for s in self.team
        }
        self._p_bad = {}  # (sender, speakers) -> per-listener p_bad, in listener order
        self.leader.compressor = self.by_role[Role.PARAMEDIC1].id
        self.ventilator = self.by_role[Role.PARAMEDIC2]

        p = scenario.patient
        self._set_patient(p)
        if scenario.pre_arrival_no_flow:
            d = scenario.dynamics
            h, c, _ = advance_patient(p.health, p.co2, p.pulse_present, False, scenario.pre_arrival_no_flow,
                                      d.d_noflow, d.d_cpr, d.r_rosc, d.co2_rate, d.co2_flow_target,
                                      d.co2_noflow_target)
            self._set_patient(replace(p, health=h, co2=c))
        self.pads = False
        self.tick = 0
        self.no_flow = 0
        self.outcome = None
        self.sent = {}
        self.heard = {a.id: [] for a in self.team}
        self.done_roots = {a.id: set() for a in self.team}
        self.cycle_entered = 0
        self.message_counts = {}
        self.category_counts = {}
        self.error_events = 0
        self.failure_events = 0
        self.hung_directives = 0
        self.drugs_given = []

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = self._streams[name] = random.Random(f"{self.seed}:{name}")
        return rng

    # ------------------------------------------------------------------ log
    def emit(self, event_type, actor=None, target=None, performative=None, category=None,
             content=None, reply_to=None, outcome=None, msg_id=None):
        rec = {"tick": self.tick, "event_type": event_type, "actor": actor, "target": target}
        if performative is not None:
            rec["performative"] = performative
        if category is not None:
            rec["category"] = category
        if content is not None:
            rec["content"] = content
        if reply_to is not None:
            rec["reply_to"] = reply_to
        if outcome is not None:
            rec["outcome"] = outcome
        if msg_id is not None:
            rec["msg_id"] = msg_id
        self.events.append(rec)

    # ------------------------------------------------------------ messages
    def _new_message(self, sender, receivers, performative, content, category, reply_to=None,
                     original_id=None, attempt=0, broadcast=False) -> Message:
        return Message(next(self.ids), sender, tuple(receivers), performative, content, category,
                       reply_to=reply_to, tick_sent=self.tick, original_id=original_id,
                       attempt=attempt, broadcast=broadcast)

    def say(self, agent: AgentRuntime, msg: Message) -> Message:
        agent.outbox.append(msg)
        return msg

    def say_draft(self, agent: AgentRuntime, draft) -> None:
        if draft is None:
            return
        self.say(agent, self._new_message(agent.id, draft.receivers, draft.performative, draft.content,
                                          draft.category, reply_to=draft.reply_to))

    def _others(self, agent) -> tuple:
        return self.listeners[agent.id]

    def broadcast(self, agent, performative, content, category) -> Message:
        return self.say(agent, self._new_message(agent.id, self._others(agent), performative, content,
                                                 category, broadcast=True))

    def _speak_and_deliver(self) -> None:
        pending = [(a.id, a.outbox[0]) for a in self.team if a.outbox and not self._awaiting_echo(a)]
        if not pending:
            return
        granted, _ = arbitrate_speakers(pending, self.cfg, self.leader.id)
        spoken = []
        t = self.tick
        for aid, msg in granted:
            agent = self.by_id[aid]
            agent.outbox.popleft()
            if msg.tick_sent != t:
                # Queued messages are unshared until spoken, so stamp in place.
                object.__setattr__(msg, "tick_sent", t)
            self._log_send(msg)
            if self.closed_loop and msg.directed and msg.performative in ACKED_PERFORMATIVES:
                agent.tracker.register(msg, t, retransmits=msg.attempt)
            spoken.append(msg)
        speakers = len(spoken)
        record = self.record_events
        for msg in spoken:
            listeners = self.listeners[msg.sender]
            if not self.cfg.acks_can_be_misheard and msg.performative in (
                Performative.CONFIRM, Performative.NOT_UNDERSTOOD
            ):
                outcomes = [DeliveryOutcome(l, Delivery.HEARD, l not in msg.receivers) for l in listeners]
            else:
                outcomes = self._deliver(msg, speakers, listeners)
            for o in outcomes:
                if record:
                    self.emit("delivery", o.listener, msg.sender, outcome=o.result.value, msg_id=msg.msg_id,
                              content={"overheard": o.overheard} if o.overheard else None)
                if o.result is Delivery.UNHEARD:
                    continue
                content = msg.content
                if o.result is Delivery.MISHEARD:
                    content = corrupt_content(msg.content, self.rng, self.action_ids)
                self.heard[o.listener].append((msg, content, o))

    def _deliver(self, msg: Message, speakers: int, listeners: tuple) -> list:
        """comms.deliver with the per-listener probabilities cached; same draws, same order."""
        key = (msg.sender, speakers)
        probs = self._p_bad.get(key)
        if probs is None:
            fam = self.familiarity[msg.sender]
            probs = self._p_bad[key] = tuple(mishear_probability(speakers, fam[l], self.cfg) for l in listeners)
        rnd = self.rng.random
        receivers = msg.receivers
        out = []
        for listener, p_bad in zip(listeners, probs):
            u = rnd()
            if u < p_bad * 0.5:
                result = Delivery.MISHEARD
            elif u < p_bad:
                result = Delivery.UNHEARD
            else:
                result = Delivery.HEARD
            out.append(DeliveryOutcome(listener, result, listener not in receivers))
        return out

    def _awaiting_echo(self, agent) -> bool:
        """Closed-loop speakers leave the air free for the read-back of what
        they said last tick before opening anything new."""
        if agent.tracker is None or agent.outbox[0].reply_to is not None:
            return False
        return any(e.sent_tick == self.tick - 1 for e in agent.tracker.pending.values())

    def _log_send(self, msg: Message) -> None:
        self.sent[msg.msg_id] = msg
        perf = msg.performative.value
        self.message_counts[perf] = self.message_counts.get(perf, 0) + 1
        key = _category_key(msg.performative, msg.category)
        self.category_counts[key] = self.category_counts.get(key, 0) + 1
        if not self.record_events:
            return
        content = dict(msg.content)
        if msg.original_id is not None:
            content["retransmission_of"] = msg.original_id
            content["attempt"] = msg.attempt
        self.emit("send", msg.sender, "all" if msg.broadcast else list(msg.receivers),
                  performative=perf, category=msg.category.value, content=content,
                  reply_to=msg.reply_to, msg_id=msg.msg_id)

    def _retransmit(self, agent, root_msg: Message, attempt: int) -> None:
        root = root_msg.root_id
        msg = self._new_message(agent.id, root_msg.receivers, root_msg.performative, root_msg.content,
                                root_msg.category, reply_to=root_msg.reply_to, original_id=root,
                                attempt=attempt)
        self.say(agent, msg)

    def _repeat(self, agent, transmission_id: int) -> None:
        """Answer a repair request by saying the same thing again."""
        prev = self.sent.get(transmission_id)
        if prev is None or prev.sender != agent.id:
            return
        if prev.attempt >= self.cfg.max_retransmits:
            return
        if isinstance(agent, LeaderRuntime) and prev.root_id not in agent.outstanding:
            return
        if any(m.root_id == prev.root_id for m in agent.outbox):
            return  # a repeat is already waiting to be said
        if agent.tracker is not None and agent.tracker.expedite(prev.root_id, self.tick):
            return  # the read-back timer will resend it
        self._retransmit(agent, prev, prev.attempt + 1)

    def _tracker_timers(self, agent) -> None:
        if agent.tracker is None:
            return
        resend, failed = agent.tracker.due(self.tick)
        for entry in resend:
            entry.retransmits += 1
            entry.sent_tick = self.tick
            self._retransmit(agent, entry.message, entry.retransmits)
        for msg in failed:
            self._failure(agent, msg.root_id, msg.receivers[0], "no_readback")
            if agent is not self.leader and msg.performative is Performative.INFORM:
                # Members keep trying to get their report across.
                self.say(agent, self._new_message(agent.id, msg.receivers, msg.performative, msg.content,
                                                  msg.category, reply_to=msg.reply_to))

    def _failure(self, agent, root: int, target, reason: str) -> None:
        self.failure_events += 1
        self.emit("failure", agent.id, target, performative=Performative.FAILURE.value,
                  content={"reason": reason}, msg_id=root)
        if isinstance(agent, LeaderRuntime):
            o = agent.outstanding.pop(root, None)
            if o is not None:
                self.hung_directives += 1
                if agent.tracker is not None:
                    agent.tracker.cancel(root)
                when = None
                if o.action_id == "inject_drug" and self.leader_mediated:
                    when = f"drug_prepared={o.drug}"
                self._issue(o.action_id, o.target, drug=o.drug, kind=o.kind, when=when)

    # --------------------------------------------------------------- tasks
    def _schedule(self, agent: AgentRuntime, task: Task) -> None:
        if task.condition:
            agent.waiting.append(task)
            self.emit("task_waiting", agent.id, task.requester,
                      content={"action": task.action_id, "when": task.condition}, msg_id=task.root)
            release_waiting(agent)
            return
        if task.action_id in CPR_ACTIONS:
            task.held = not self._cpr_ready(task.action_id)
        if agent.current is None:
            if runnable(agent, task):
                self._start(agent, task)
            else:
                agent.queue.append(task)
        elif can_preempt(agent, task.action_id, self.catalog) and runnable(agent, task):
            cur = agent.current
            agent.current = None
            agent.queue.insert(0, cur)
            self.emit("action_suspend", agent.id, content={"action": cur.action_id, "remaining": cur.remaining})
            self._start(agent, task)
        else:
            agent.queue.append(task)

    def _start(self, agent: AgentRuntime, task: Task) -> None:
        if agent.current is not None:
            raise IntegrityFault(f"{agent.id} started {task.action_id} while busy")
        agent.current = task
        if task.remaining > 0:
            task.started = self.tick
            self.emit("action_resume", agent.id, content={"action": task.action_id, "remaining": task.remaining})
            return
        spec = self.catalog[task.action_id]
        prof = agent.profile if agent.tiredness == agent.profile.tiredness else replace(
            agent.profile, tiredness=agent.tiredness)
        task.duration = task.remaining = sample_duration(spec, prof, self.stream(task.action_id), self.acfg.duration_weights)
        task.started = self.tick
        content = {"action": task.action_id, "duration": task.duration}
        if task.drug:
            content["drug"] = task.drug
        if task.corrupted:
            content["corrupted"] = True
        self.emit("action_start", agent.id, task.requester, content=content, msg_id=task.root)
        self._cpr_lookahead(agent, task)

    def _cpr_ready(self, action_id: str) -> bool:
        """Whether the 30:2 sequence lets this CPR action begin now."""
        als = self.leader.als
        due_vent = als.phase is A.Phase.CPR_CYCLE and als.compressions_in_block >= A.COMPRESSIONS_PER_BLOCK
        if action_id == "ventilate_x2":
            return due_vent and not self._cpr_active("ventilate_x2")
        return not due_vent and not self._cpr_active("chest_compressions_30")

    def _cpr_active(self, action_id: str) -> bool:
        return any(a.current is not None and a.current.action_id == action_id for a in self.team)

    def _cpr_lookahead(self, agent, task: Task) -> None:
        """The leader watches CPR and calls the next hand-off as each part begins."""
        leader = self.leader
        if leader.als.phase is not A.Phase.CPR_CYCLE or self.outcome is not None:
            return
        if task.action_id == "chest_compressions_30" and agent.id == leader.compressor:
            nxt, target = "ventilate_x2", self.ventilator.id
        elif task.action_id == "ventilate_x2" and agent is self.ventilator:
            nxt, target = "chest_compressions_30", leader.compressor
        else:
            return
        if not self._open(nxt):
            self._issue(nxt, target)

    def _release_cpr(self, action_id: str) -> None:
        """Whoever is holding the next CPR order starts it at once."""
        if not self._cpr_ready(action_id):
            return
        for agent in self.team:
            held = [t for t in agent.queue if t.action_id == action_id and t.held]
            if not held:
                continue
            task = held[0]
            agent.queue.remove(task)
            task.held = False
            if agent.current is None:
                self._start(agent, task)
            elif can_preempt(agent, action_id, self.catalog):
                cur = agent.current
                agent.current = None
                agent.queue.insert(0, cur)
                self.emit("action_suspend", agent.id, content={"action": cur.action_id, "remaining": cur.remaining})
                self._start(agent, task)
            else:
                agent.queue.insert(0, task)
            return

    def _abort_cpr(self) -> None:
        for action in CPR_ACTIONS:
            self._close(action)
        for agent in self.team:
            agent.queue = [t for t in agent.queue if t.action_id not in CPR_ACTIONS]
            cur = agent.current
            if cur is not None and cur.action_id in CPR_ACTIONS:
                agent.current = None
                self.emit("action_abort", agent.id, content={"action": cur.action_id, "remaining": cur.remaining})

    def _progress(self, agent: AgentRuntime) -> None:
        task = agent.current
        if task is None or task.started == self.tick:
            return
        task.remaining -= 1
        if task.remaining > 0:
            return
        agent.current = None
        spec = self.catalog[task.action_id]
        success = self.stream(task.action_id).random() < success_probability(spec, self.patient, self.sc.defibrillation)
        content = {"action": task.action_id}
        if task.drug:
            content["drug"] = task.drug
        self.emit("action_end", agent.id, content=content, outcome="success" if success else "fail",
                  msg_id=task.root)
        perceive(agent, [], [(task, success)], self.tick)
        if success or task.action_id in CPR_ACTIONS:
            self.done_roots[agent.id].add((task.root, task.action_id))
        self._complete(agent, task, success)

    def _complete(self, agent: AgentRuntime, task: Task, success: bool) -> None:
        a = task.action_id
        leader = self.leader
        # CPR parts advance the 30:2 count whatever their rolled quality.
        if a == "chest_compressions_30":
            add_tiredness(agent, self.acfg.tiredness_growth)
            als = leader.als
            if als.phase is A.Phase.CPR_CYCLE and als.compressions_in_block < A.COMPRESSIONS_PER_BLOCK:
                leader.als = A.complete_compression_block(als)
                self._release_cpr("ventilate_x2")
            return
        if a == "ventilate_x2":
            als = leader.als
            if als.phase is A.Phase.CPR_CYCLE and als.compressions_in_block >= A.COMPRESSIONS_PER_BLOCK:
                leader.als = A.complete_ventilation_pair(als)
                self._release_cpr("chest_compressions_30")
            return
        if a == "charge_and_shock":
            self.emit("shock", agent.id, content={"index": leader.als.shocks_delivered + 1},
                      outcome="converted" if success else "no_conversion")
            if success:
                self._set_rhythm(RhythmState(RhythmKind.NORMAL_SINUS, 72), breathing=True)
            leader.shock_delivered = True
            self._leader_als()
            return
        if not success and a not in ("check_pulse", "inject_drug"):
            # Failed attempts are simply tried again.
            task.remaining = 0
            agent.queue.insert(0, task)
            return
        if a == "attach_defib_pads":
            self.pads = True
        elif a == "inject_drug":
            if success:
                self.drugs_given.append(task.drug)
                self.emit("drug_given", agent.id, content={"drug": task.drug})
                kind = self.patient.rhythm.kind
                if task.drug == A.Drug.ADRENALINE.value and kind in (RhythmKind.ASYSTOLE, RhythmKind.PEA):
                    if self.stream("drug_response").random() < self.acfg.adrenaline_conversion:
                        self._set_rhythm(RhythmState(RhythmKind.VF, 140))
            else:
                task.remaining = 0
                agent.queue.insert(0, task)
                return
        if task.requester is None or task.corrupted and task.requester == agent.id:
            return
        key = REPORT_KEYS.get(a, f"done:{a}")
        if any(w.requester == task.requester and parse_condition(w.condition)[0] == key for w in agent.waiting):
            return  # the requester's own follow-up order is waiting on this; nothing to report
        if a == "check_pulse":
            value = self.patient.pulse_present if success else False
        elif a in ("prepare_drug", "inject_drug"):
            value = task.drug
        else:
            value = True
        self.say(agent, self._new_message(agent.id, (task.requester,), Performative.INFORM,
                                          {"info": key, "value": value}, self.catalog[a].category))

    def _set_rhythm(self, rhythm: RhythmState, breathing: Optional[bool] = None) -> None:
        p = self.patient
        before = p.rhythm.kind
        self._set_patient(replace(p, rhythm=rhythm, breathing=p.breathing if breathing is None else breathing))
        self.emit("rhythm_change", content={"from": before.value, "to": rhythm.kind.value},
                  outcome="pulse" if self.pulse else "pulseless")

    # -------------------------------------------------------------- members
    def _member_turn(self, agent: AgentRuntime) -> None:
        heard = self.heard[agent.id]
        if heard:
            self.heard[agent.id] = []
        t = self.tick
        for msg, content, o in heard:
            perceive(agent, [(msg, content)], [], t)
            if o.overheard:
                continue
            p = msg.performative
            if p in (Performative.REQUEST, Performative.REQUEST_WHEN):
                self._on_request(agent, msg, content, o)
            elif p is Performative.QUERY_REF:
                self._on_query(agent, msg, content)
            elif p is Performative.INFORM:
                self._readback(agent, msg, content, o)
            elif p is Performative.CONFIRM and agent.tracker is not None:
                agent.tracker.on_confirm(msg, t, content)
            elif p is Performative.NOT_UNDERSTOOD:
                self._repeat(agent, msg.reply_to)
        if agent.tracker is not None and agent.tracker.pending:
            self._tracker_timers(agent)
        if agent.waiting or (agent.current is None and agent.queue):
            for kind, task in decide(agent, t):
                if kind == "start":
                    self._start(agent, task)

    def _readback(self, agent, msg: Message, content: dict, o: DeliveryOutcome) -> None:
        if self.closed_loop and msg.directed:
            for confirm in closed_loop_exchange(msg, o, self.rng, self.cfg, self.ids, self.tick,
                                                heard_content=content, action_ids=self.action_ids):
                self.say(agent, confirm)

    def _on_request(self, agent: AgentRuntime, msg: Message, content: dict, o: DeliveryOutcome) -> None:
        if "signal" in msg.content:
            return  # coordination call, acted on by the whole team
        misheard = o.result is Delivery.MISHEARD
        self._readback(agent, msg, content, o)
        if not self.closed_loop and misheard:
            if self.rng.random() >= self.cfg.misheard_execution_risk:
                self.say(agent, baseline_mishear_response(msg, o, self.ids, self.tick))
                return
        existing = agent.has_task(msg.root_id)
        if existing is not None:
            if existing.action_id == content.get("action"):
                if not self.closed_loop:
                    self.say_draft(agent, handle_request(agent, msg, content, self.catalog)[0])
                return
            # A corrected repeat replaces what was misunderstood.
            self._drop_task(agent, existing)
        reply, task = handle_request(agent, msg, content, self.catalog, send_agree=not self.closed_loop)
        self.say_draft(agent, reply)
        if task is None:
            return
        if self._duplicate(agent, task):
            return
        if misheard:
            task.corrupted = True
            self.error_events += 1
            self.emit("error", agent.id, msg.sender, content={"heard": content.get("action"),
                                                               "said": msg.content.get("action")},
                      msg_id=msg.msg_id)
        self._schedule(agent, task)

    def _duplicate(self, agent, task: Task) -> bool:
        if (task.root, task.action_id) in self.done_roots[agent.id]:
            return True
        for other in itertools.chain((agent.current,) if agent.current else (), agent.queue, agent.waiting):
            if other.action_id == task.action_id and other.drug == task.drug:
                return True
        return False

    def _drop_task(self, agent, task: Task) -> None:
        if agent.current is task:
            agent.current = None
            self.emit("action_abort", agent.id, content={"action": task.action_id, "remaining": task.remaining})
        elif task in agent.queue:
            agent.queue.remove(task)
        elif task in agent.waiting:
            agent.waiting.remove(task)

    def _on_query(self, agent, msg: Message, content: dict) -> None:
        q = content.get("query", "")
        if not q.startswith("status:"):
            self.say(agent, baseline_mishear_response(msg, DeliveryOutcome(agent.id, Delivery.MISHEARD),
                                                      self.ids, self.tick))
            return
        status = agent.task_status(q[len("status:"):])
        self.say(agent, self._new_message(agent.id, (msg.sender,), Performative.INFORM,
                                          {"info": q, "value": status}, msg.category, reply_to=msg.msg_id))

    # --------------------------------------------------------------- leader
    def _issue(self, action_id: str, target: str, drug=None, kind=None, when=None) -> Message:
        leader = self.leader
        content = {"action": action_id}
        if drug is not None:
            content["drug"] = drug
        perf = Performative.REQUEST
        if when is not None:
            content["when"] = when
            perf = Performative.REQUEST_WHEN
        msg = self._new_message(leader.id, (target,), perf, content, self.catalog[action_id].category)
        self.say(leader, msg)
        leader.outstanding[msg.msg_id] = Outstanding(msg.msg_id, kind or action_id, action_id, target,
                                                     self.tick, drug=drug)
        return msg

    def _open(self, action_id: str, drug=None) -> list:
        return [o for o in self.leader.outstanding.values()
                if o.action_id == action_id and (drug is None or o.drug == drug)]

    def _close(self, action_id: str, drug=None) -> None:
        leader = self.leader
        for o in self._open(action_id, drug):
            del leader.outstanding[o.root]
            if leader.tracker is not None:
                leader.tracker.cancel(o.root)
        # Re-issued copies still sitting in the outbox are moot now.
        if leader.outbox:
            leader.outbox = type(leader.outbox)(
                m for m in leader.outbox
                if not (m.content.get("action") == action_id and m.performative in
                        (Performative.REQUEST, Performative.REQUEST_WHEN) and m.root_id not in leader.outstanding)
            )

    def _leader_turn(self) -> None:
        leader = self.leader
        heard = self.heard[leader.id]
        if heard:
            self.heard[leader.id] = []
        t = self.tick
        for msg, content, o in heard:
            perceive(leader, [(msg, content)], [], t)
            p = msg.performative
            if p is Performative.INFORM:
                self._leader_inform(msg, content)
                if not o.overheard:
                    self._readback(leader, msg, content, o)
                continue
            if o.overheard:
                continue
            prev = self.sent.get(msg.reply_to) if msg.reply_to is not None else None
            root = prev.root_id if prev is not None else None
            if p is Performative.AGREE and root in leader.outstanding:
                self._ack(leader.outstanding[root])
            elif p is Performative.CONFIRM and leader.tracker is not None:
                if leader.tracker.on_confirm(msg, t, content) and root in leader.outstanding:
                    leader.outstanding[root].verified = True
                    self._ack(leader.outstanding[root])
            elif p in (Performative.NOT_UNDERSTOOD, Performative.REFUSE):
                self._repeat(leader, msg.reply_to)
        if leader.tracker is not None and leader.tracker.pending:
            self._tracker_timers(leader)
        if leader.outstanding:
            self._leader_timers()
        self._leader_als()
        if leader.drug_queue:
            self._next_drug()

    def _ack(self, o: Outstanding) -> None:
        o.acked = True
        if o.action_id in ACK_CLOSES:
            self.leader.outstanding.pop(o.root, None)

    def _leader_inform(self, msg: Message, content: dict) -> None:
        leader = self.leader
        key, value = content.get("info"), content.get("value")
        if key in INFO_CLOSES:
            action = INFO_CLOSES[key]
            if key == "pulse":
                if isinstance(value, bool) and leader.als.phase is A.Phase.POST_SHOCK_PULSE_CHECK:
                    leader.pulse_report = value
                    self._close(action)
            elif key in ("drug_prepared", "drug_given"):
                if value and value != "?":
                    self._close(action, value)
                    if key == "drug_prepared" and value == leader.active_drug and not self.leader_mediated:
                        self._issue("inject_drug", msg.sender, drug=value)
                    if key == "drug_given":
                        self._close("prepare_drug", value)
                    if key == "drug_given" and value == leader.active_drug:
                        leader.active_drug = None
            elif value is True:
                self._close(action)
        elif isinstance(key, str) and key.startswith("status:"):
            action = key[len("status:"):]
            if value == "done":
                self._close(action)
                belief = REPORT_KEYS.get(action)
                if belief and belief not in ("pulse", "drug_prepared", "drug_given"):
                    leader.believe(belief, True, self.tick)
            elif value == "unknown":
                for o in self._open(action):
                    self._failure(leader, o.root, o.target, "hung")
            elif value in ("in_progress", "queued"):
                for o in self._open(action):
                    o.acked = True
                    o.last_query = self.tick

    def _leader_timers(self) -> None:
        leader = self.leader
        t = self.tick
        for o in list(leader.outstanding.values()):
            if o.root not in leader.outstanding:
                continue
            if not self.closed_loop and not o.acked and t - o.issued >= self.acfg.hang_timeout:
                self._failure(leader, o.root, o.target, "hung")
            elif self._needs_query(o) and t - max(o.issued, o.last_query) >= self.acfg.staleness_window:
                self._query(o)

    def _query(self, o: Outstanding) -> None:
        leader = self.leader
        o.last_query = self.tick
        self.say(leader, self._new_message(leader.id, (o.target,), Performative.QUERY_REF,
                                           {"query": f"status:{o.action_id}"},
                                           self.catalog[o.action_id].category))

    @staticmethod
    def _needs_query(o: Outstanding) -> bool:
        # A verified read-back means the completion report will itself be
        # read back, so only unverified acknowledgements are chased.
        return o.acked and not o.verified and o.action_id not in ACK_CLOSES

    def _next_drug(self) -> None:
        leader = self.leader
        if leader.active_drug is not None or not leader.drug_queue:
            return
        drug = leader.drug_queue.pop(0)
        leader.active_drug = drug
        p3 = self.by_role[Role.PARAMEDIC3].id
        self._issue("prepare_drug", p3, drug=drug)
        if self.leader_mediated:
            self._issue("inject_drug", p3, drug=drug, when=f"drug_prepared={drug}")

    def _observation(self) -> A.Observation:
        leader = self.leader
        monitor = self.pads and bool(leader.belief("pads_attached"))
        return A.Observation(
            rhythm=self._patient.rhythm if monitor else None,
            pulse=leader.pulse_report,
            breathing=self._patient.breathing,
            shock_delivered=leader.shock_delivered,
        )

    def _leader_als(self) -> None:
        leader = self.leader
        for _ in range(8):
            state = leader.als
            if state.phase is A.Phase.TERMINATED or state.phase is A.Phase.CPR_CYCLE:
                return  # CPR runs on its own until the clock calls a check
            directives, new = A.next_directives(state, self._observation(), self.tick, self.sc.als)
            if new == state and not directives:
                return
            if new.phase is not state.phase:
                self.emit("phase", leader.id, content={"from": state.phase.value, "to": new.phase.value,
                                                       "cycle_clock": state.cycle_clock})
                if state.phase is A.Phase.CHARGING:
                    leader.shock_delivered = False
                if state.phase is A.Phase.POST_SHOCK_PULSE_CHECK:
                    leader.pulse_report = None
            leader.als = new
            if new.phase is A.Phase.CPR_CYCLE and (new.phase is not state.phase or new.cycle_clock == 0):
                self.cycle_entered = self.tick
            self._apply(directives)
            if new.phase is A.Phase.TERMINATED:
                self.outcome = new.outcome.value
                return

    def _apply(self, directives) -> None:
        leader = self.leader
        K = A.DirectiveKind
        for d in directives:
            if d.kind is K.START_COMPRESSIONS or d.kind is K.CHECK_PULSE:
                target = leader.compressor
                if d.kind is K.CHECK_PULSE:
                    leader.pulse_report = None
                if not self._open(d.action_id):
                    self._issue(d.action_id, target)
            elif d.kind in (K.ATTACH_PADS, K.INSTALL_IV, K.INTUBATE):
                open_ = self._open(d.action_id)
                if not open_:
                    self._issue(d.action_id, self.by_role[d.target_role].id)
                else:
                    # Asked for again while still pending: find out where it stands.
                    for o in open_:
                        if self.tick - max(o.issued, o.last_query) >= self.acfg.staleness_window:
                            self._query(o)
            elif d.kind is K.CHARGE_SHOCK:
                leader.queue = [t for t in leader.queue if t.action_id != "charge_and_shock"]
                if leader.current is None:
                    self._start(leader, Task("charge_and_shock", requester=leader.id))
            elif d.kind is K.STAND_CLEAR:
                self._abort_cpr()
                self.broadcast(leader, Performative.REQUEST, {"signal": "stand_clear"},
                               ContentCategory.MEDICAL_ACTION)
            elif d.kind is K.PREPARE_DRUG:
                leader.drug_queue.append(d.drug.value)
            elif d.kind is K.STOP_RESUSCITATION:
                self._abort_cpr()
                # Read-backs already queued are said along with the stop call.
                for agent in self.team:
                    for m in agent.outbox:
                        if m.performative is Performative.CONFIRM:
                            self._log_send(m)
                msg = self._new_message(leader.id, self._others(leader), Performative.INFORM,
                                        {"info": "resuscitation", "value": "stop"},
                                        ContentCategory.PATIENT_STATUS, broadcast=True)
                self._log_send(msg)

    def _rhythm_check(self) -> None:
        leader = self.leader
        obs = self._observation()
        rhythm = obs.rhythm
        self.emit("rhythm_check", leader.id, content={
            "cycle_clock": leader.als.cycle_clock,
            "rhythm": rhythm.kind.value if rhythm else None,
        })
        if rhythm is not None:
            self._abort_cpr()
            others = [a for a in self.team if a.role not in NON_COMPRESSOR_ROLES]
            new = rotate_compressor(others, leader.compressor, self.tick)
            if new != leader.compressor:
                self.emit("rotate", leader.id, new, content={"from": leader.compressor})
            leader.compressor = new
            self.broadcast(leader, Performative.INFORM, {"info": "cycle", "value": leader.als.shocks_delivered},
                           ContentCategory.TIME)
            self.broadcast(leader, Performative.INFORM, {"info": "rhythm", "value": rhythm.kind.value},
                           ContentCategory.PATIENT_STATUS)
        self._leader_als()

    # ------------------------------------------------------------------ tick
    def flow(self) -> bool:
        for agent in self.team:
            cur = agent.current
            if cur is not None and cur.action_id in CPR_ACTIONS:
                return True
        return False

    def start(self) -> None:
        self.emit("run_start", content={"seed": self.seed, "variant": self.cfg.variant.value,
                                        "health": self.patient.health,
                                        "rhythm": self.patient.rhythm.kind.value,
                                        "pulse": self.patient.pulse_present,
                                        "team": [a.id for a in self.team]})
        self._leader_als()

    def step(self) -> None:
        self.tick += 1
        # 1-2: talk, then hear
        self._speak_and_deliver()
        # 3: perceive and decide, in role order
        self._leader_turn()
        heard = self.heard
        for agent in self.members:
            # Skip members with nothing to hear, time out, release or start.
            if (heard[agent.id] or agent.waiting or (agent.current is None and agent.queue)
                    or (agent.tracker is not None and agent.tracker.pending)):
                self._member_turn(agent)
        # 4: work progresses
        t = self.tick
        for agent in self.team:
            cur = agent.current
            if cur is not None and cur.started != t:
                self._progress(agent)
        # 5: patient
        self._update_patient(1, self.flow())
        # 6: protocol clock and termination
        leader = self.leader
        # The cycle clock counts whole seconds spent in CPR, from the tick after entry.
        if self.outcome is None and leader.als.phase is A.Phase.CPR_CYCLE and self.cycle_entered != self.tick:
            leader.als = A.advance_clock(leader.als, 1)
            if leader.als.phase is A.Phase.RHYTHM_CHECK:
                self.emit("phase", leader.id, content={"from": A.Phase.CPR_CYCLE.value,
                                                       "to": A.Phase.RHYTHM_CHECK.value,
                                                       "cycle_clock": leader.als.cycle_clock})
                self._rhythm_check()
        if self.outcome is None:
            verdict = A.check_termination(leader.als, A.Observation(), self.tick, self.sc.als.futility_limit)
            if verdict is not None:
                self.outcome = verdict.value
                self.emit("phase", leader.id, content={"from": leader.als.phase.value, "to": "Terminated",
                                                       "cycle_clock": leader.als.cycle_clock})
                leader.als = replace(leader.als, phase=A.Phase.TERMINATED, outcome=verdict)
                self._apply([A.Directive(A.DirectiveKind.STOP_RESUSCITATION, A.BROADCAST)])
        if self.outcome is None and self.tick >= self.sc.max_ticks:
            self.outcome = TICK_LIMIT
        # 7: metrics
        if not self.pulse and not self.flow():
            self.no_flow += 1

    # Health and CO2 change every second; they live as plain floats and the
    # frozen PatientState is only assembled when someone looks at it.
    def _set_patient(self, p: PatientState) -> None:
        self._patient = p
        self.health, self.co2 = p.health, p.co2
        self.pulse = p.pulse_present

    @property
    def patient(self) -> PatientState:
        p = self._patient
        if p.health != self.health or p.co2 != self.co2:
            p = self._patient = replace(p, health=self.health, co2=self.co2)
        return p

    def _update_patient(self, steps: int, flow: bool) -> None:
        d = self.sc.dynamics
        self.health, self.co2, zero_at = advance_patient(self.health, self.co2, self.pulse, flow, steps,
                                                         d.d_noflow, d.d_cpr, d.r_rosc, d.co2_rate,
                                                         d.co2_flow_target, d.co2_noflow_target)
        if zero_at and self._patient.rhythm.kind is not RhythmKind.ASYSTOLE:
            tick = self.tick
            self.tick = tick - steps + zero_at
            self._set_rhythm(RhythmState(RhythmKind.ASYSTOLE, 0))
            self.tick = tick

    def _wake_tick(self) -> int:
        """First future tick at which anything can happen, or tick + 1."""
        t = self.tick
        nxt = t + 1
        if any(self.heard.values()):
            return nxt
        leader = self.leader
        wake = min(self.sc.max_ticks, max(self.sc.als.futility_limit, nxt))
        for agent in self.team:
            if agent.outbox:
                return nxt
            if agent.current is None:
                if any(runnable(agent, q) for q in agent.queue):
                    return nxt
            else:
                wake = min(wake, t + agent.current.remaining)
            if agent.waiting and any(condition_holds(agent, w.condition) for w in agent.waiting):
                return nxt
            if agent.tracker is not None:
                d = agent.tracker.next_deadline()
                if d is not None:
                    wake = min(wake, d)
        als = leader.als
        if als.phase is A.Phase.CPR_CYCLE:
            wake = min(wake, t + A.CYCLE_SECONDS - als.cycle_clock)
        elif als.phase not in _PASSIVE_PHASES:
            # Transient phases move on within the tick they are entered.
            wake = min(wake, nxt) if leader.current is None else wake
        for o in leader.outstanding.values():
            if not self.closed_loop and not o.acked:
                wake = min(wake, o.issued + self.acfg.hang_timeout)
            elif self._needs_query(o):
                wake = min(wake, max(o.issued, o.last_query) + self.acfg.staleness_window)
        if leader.active_drug is None and leader.drug_queue:
            return nxt
        return max(wake, nxt)

    def _skip_quiet(self) -> None:
        wake = self._wake_tick()
        k = wake - self.tick - 1
        if k <= 0:
            return
        flow = self.flow()
        for agent in self.team:
            if agent.current is not None:
                agent.current.remaining -= k
        self.tick += k
        self._update_patient(k, flow)
        if not self.pulse and not flow:
            self.no_flow += k
        if self.leader.als.phase is A.Phase.CPR_CYCLE:
            self.leader.als = A.advance_clock(self.leader.als, k)

    def run(self) -> tuple:
        self.start()
        while self.outcome is None:
            self.step()
            if self.outcome is None and self.skip_quiet:
                self._skip_quiet()
        self.emit("run_end", content={"total_seconds": self.tick, "no_flow_seconds": self.no_flow},
                  outcome=self.outcome)
        return self.result(), self.events

    def result(self) -> RunResult:
        return RunResult(
            outcome=self.outcome,
            total_seconds=self.tick,
            no_flow_seconds=self.no_flow,
            message_counts=dict(sorted(self.message_counts.items())),
            category_counts=dict(sorted(self.category_counts.items())),
            error_events=self.error_events,
            seed=self.seed,
            failure_events=self.failure_events,
            hung_directives=self.hung_directives,
            total_messages=sum(self.message_counts.values()),
            shocks=self.leader.als.shocks_delivered,
            drugs_given=list(self.drugs_given),
        )


def run(scenario: ScenarioConfig, seed: int, skip_quiet: bool = True) -> tuple:
    """Simulate one resuscitation. Returns (RunResult, event list)."""
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError(problems)
    return Simulation(scenario, seed, skip_quiet=skip_quiet).run()


def events_to_jsonl(events) -> str:
    return "".join(json.dumps(e, separators=(",", ":")) + "\n" for e in events)


# ----------------------------------------------------------------- batches
@functools.lru_cache(maxsize=None)
def _category_key(performative: Performative, category: ContentCategory) -> str:
    return f"{fipa_category(performative).value}/{category.value}"


def _no_emit(*args, **kwargs) -> None:
    pass


def _run_one(args) -> dict:
    scenario, seed = args
    try:
        result, _ = Simulation(scenario, seed, record_events=False).run()
        return result.to_dict()
    except Exception as exc:  # integrity faults are reported per seed
        log.error("seed %d failed: %s", seed, exc)
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}"}


def run_many(scenario: ScenarioConfig, seeds, parallelism: int = 1) -> list:
    problems = validate_scenario(scenario)
    if problems:
        raise ScenarioError(problems)
    jobs = [(scenario, s) for s in seeds]
    # Extra processes beyond the cores present only add start-up cost.
    workers = min(parallelism, os.cpu_count() or 1, len(jobs))
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    chunk = max(1, len(jobs) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = list(pool.map(_run_one, jobs, chunksize=chunk))
    return sorted(out, key=lambda r: r["seed"])


def _stats(values) -> dict:
    if not values:
        return {"mean": None, "median": None, "stdev": None}
    return {
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
    }


def summarize(results: list) -> dict:
    ok = [r for r in results if "error" not in r]
    errors = [{"seed": r["seed"], "error": r["error"]} for r in results if "error" in r]
    perfs = sorted({p for r in ok for p in r["message_counts"]})
    return {
        "n_runs": len(results),
        "n_completed": len(ok),
        "total_seconds": _stats([r["total_seconds"] for r in ok]),
        "no_flow_seconds": _stats([r["no_flow_seconds"] for r in ok]),
        "rosc_rate": (sum(r["outcome"] == A.Outcome.ROSC.value for r in ok) / len(ok)) if ok else None,
        "mean_messages": statistics.fmean(r["total_messages"] for r in ok) if ok else None,
        "mean_message_counts": {
            p: statistics.fmean(r["message_counts"].get(p, 0) for r in ok) for p in perfs
        },
        "mean_hung_directives": statistics.fmean(r["hung_directives"] for r in ok) if ok else None,
        "mean_error_events": statistics.fmean(r["error_events"] for r in ok) if ok else None,
        "errors": errors,
    }


def monte_carlo(scenario: ScenarioConfig, n_runs: int, base_seed: int = 0, parallelism: int = 1) -> dict:
    """Run seeds base_seed .. base_seed + n_runs - 1 and aggregate."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    results = run_many(scenario, range(base_seed, base_seed + n_runs), parallelism)
    summary = summarize(results)
    summary["runs"] = results
    return summary
