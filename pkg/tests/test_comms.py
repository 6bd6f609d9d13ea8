import itertools
import random

import pytest

from resusim.comms import (
    Delivery,
    DeliveryOutcome,
    FipaCategory,
    Message,
    Performative,
    ProtocolConfig,
    ProtocolMisuse,
    ReadbackTracker,
    Variant,
    arbitrate_speakers,
    baseline_mishear_response,
    closed_loop_exchange,
    corrupt_content,
    deliver,
    fipa_category,
    mishear_probability,
)
from resusim.domain import ContentCategory

ACTIONS = ["a", "b", "c", "d"]
CL = ProtocolConfig(variant=Variant.CLOSED_LOOP)


def request(msg_id=1, sender="phy", receivers=("para1",), reply_to=None, perf=Performative.REQUEST, **kw):
    return Message(msg_id, sender, tuple(receivers), perf, {"action": "a"}, ContentCategory.MEDICAL_ACTION,
                   reply_to=reply_to, **kw)


# ---------------------------------------------------------------- messages
def test_message_invariants():
    with pytest.raises(ValueError):
        Message(1, "phy", (), Performative.REQUEST, {}, ContentCategory.TIME)
    with pytest.raises(ValueError):
        Message(1, "phy", ("phy",), Performative.REQUEST, {}, ContentCategory.TIME)
    for p in (Performative.CONFIRM, Performative.NOT_UNDERSTOOD):
        with pytest.raises(ValueError):
            Message(2, "para1", ("phy",), p, {}, ContentCategory.TIME)


def test_root_id_follows_original():
    assert request(5).root_id == 5
    assert request(9, original_id=5, attempt=1).root_id == 5


# --------------------------------------------------------------- delivery
def test_p_bad_arithmetic():
    assert mishear_probability(1, 1.0, ProtocolConfig(base_mishear=0.1, familiarity_bonus=0.5)) == pytest.approx(0.05)
    assert mishear_probability(3, 0.0, ProtocolConfig(base_mishear=0.1, noise_coefficient=0.15)) == pytest.approx(0.4)
    assert mishear_probability(20, 0.0, ProtocolConfig()) == 0.95


def test_zero_mishear_everyone_hears():
    cfg = ProtocolConfig(base_mishear=0.0)
    rng = random.Random(0)
    for _ in range(500):
        out = deliver(request(), 1, 0.0, cfg, rng, listeners=("para1", "para2", "para3"))
        assert [o.result for o in out] == [Delivery.HEARD] * 3
        assert [o.overheard for o in out] == [False, True, True]


def test_three_speakers_rate():
    cfg = ProtocolConfig(base_mishear=0.1, noise_coefficient=0.15)
    rng = random.Random(42)
    n = 100_000
    bad = sum(deliver(request(), 3, 0.0, cfg, rng)[0].result is not Delivery.HEARD for _ in range(n))
    assert abs(bad / n - 0.40) <= 0.01


def test_deliver_is_stateless():
    cfg = ProtocolConfig(base_mishear=0.3)
    a = deliver(request(), 2, {"para1": 0.2}, cfg, random.Random(5), listeners=("para1", "para2"))
    b = deliver(request(), 2, {"para1": 0.2}, cfg, random.Random(5), listeners=("para1", "para2"))
    assert a == b


def test_deliver_rejects_no_speakers():
    with pytest.raises(ValueError):
        deliver(request(), 0, 0.0, ProtocolConfig(), random.Random(0))


def test_corruption_changes_payload():
    rng = random.Random(1)
    for _ in range(200):
        assert corrupt_content({"action": "b"}, rng, ACTIONS)["action"] in {"a", "c", "d"}
    assert corrupt_content({"info": "pulse", "value": True}, rng, ACTIONS)["value"] is False
    assert corrupt_content({"info": "drug", "value": "Adrenaline"}, rng, ACTIONS)["value"] == "?"


# ------------------------------------------------------------ closed loop
def test_heard_request_one_confirm():
    ids = itertools.count(100)
    out = closed_loop_exchange(request(), DeliveryOutcome("para1", Delivery.HEARD), random.Random(0), CL, ids, 3)
    assert len(out) == 1
    c = out[0]
    assert c.performative is Performative.CONFIRM and c.reply_to == 1 and c.content == {"action": "a"}
    tracker = ReadbackTracker(CL)
    tracker.register(request(), 3)
    assert tracker.on_confirm(c, 4) is True and not tracker.pending


def test_misheard_echo_triggers_retransmit():
    ids = itertools.count(100)
    out = closed_loop_exchange(request(), DeliveryOutcome("para1", Delivery.MISHEARD), random.Random(0), CL,
                               ids, 3, action_ids=ACTIONS)
    assert out[0].content["action"] != "a"
    tracker = ReadbackTracker(CL)
    tracker.register(request(), 3)
    assert tracker.on_confirm(out[0], 4) is False
    resend, failed = tracker.due(4)
    assert [e.message.msg_id for e in resend] == [1] and failed == []


def test_unheard_and_overheard_no_confirm():
    ids = itertools.count(100)
    assert closed_loop_exchange(request(), DeliveryOutcome("para1", Delivery.UNHEARD), random.Random(0), CL, ids, 3) == []
    assert closed_loop_exchange(request(), DeliveryOutcome("para2", Delivery.HEARD, True), random.Random(0), CL,
                                ids, 3) == []


def test_closed_loop_misuse_under_baseline():
    with pytest.raises(ProtocolMisuse):
        closed_loop_exchange(request(), DeliveryOutcome("para1", Delivery.HEARD), random.Random(0),
                             ProtocolConfig(), itertools.count(), 0)


def test_retry_bound_then_failure():
    cfg = ProtocolConfig(variant=Variant.CLOSED_LOOP, ack_timeout=4, max_retransmits=2)
    tracker = ReadbackTracker(cfg)
    original = request()
    tracker.register(original, 0)
    retransmissions, failures, tick = 0, [], 0
    while tracker.pending:
        tick += 1
        resend, failed = tracker.due(tick)
        failures += failed
        for entry in resend:  # silence every time
            retransmissions += 1
            tracker.register(request(10 + retransmissions, original_id=1, attempt=entry.retransmits + 1),
                             tick, retransmits=entry.retransmits + 1)
    assert retransmissions == 2 and len(failures) == 1 and tick == 12


def test_expedite_and_deadline():
    tracker = ReadbackTracker(CL)
    assert tracker.next_deadline() is None
    tracker.register(request(), 10)
    assert tracker.next_deadline() == 14
    assert tracker.expedite(1, 11) and tracker.next_deadline() == 11
    assert not tracker.expedite(99, 11)


# -------------------------------------------------------------- baseline
def test_baseline_repair():
    ids = itertools.count(50)
    nu = baseline_mishear_response(request(), DeliveryOutcome("para1", Delivery.MISHEARD), ids, 2)
    assert nu.performative is Performative.NOT_UNDERSTOOD and nu.reply_to == 1 and nu.receivers == ("phy",)
    assert baseline_mishear_response(request(), DeliveryOutcome("para1", Delivery.HEARD), ids, 2) is None
    assert baseline_mishear_response(request(), DeliveryOutcome("para1", Delivery.UNHEARD), ids, 2) is None


# ------------------------------------------------------------ arbitration
def test_leader_mediated_defers_new_topic():
    cfg = ProtocolConfig(variant=Variant.LEADER_MEDIATED)
    lead = ("phy", request(1))
    p1 = ("para1", request(2, sender="para1", receivers=("phy",)))
    granted, deferred = arbitrate_speakers([lead, p1], cfg)
    assert granted == [lead] and deferred == [p1]


def test_leader_mediated_grants_replies():
    cfg = ProtocolConfig(variant=Variant.LEADER_MEDIATED)
    confirm = ("para2", Message(3, "para2", ("phy",), Performative.CONFIRM, {"action": "a"},
                                ContentCategory.MEDICAL_ACTION, reply_to=1))
    lead = ("phy", request(4))
    assert arbitrate_speakers([confirm], cfg) == ([confirm], [])
    assert arbitrate_speakers([lead, confirm], cfg) == ([lead, confirm], [])


def test_leader_mediated_one_new_topic_when_leader_silent():
    cfg = ProtocolConfig(variant=Variant.LEADER_MEDIATED)
    p1 = ("para1", request(2, sender="para1", receivers=("phy",)))
    p3 = ("para3", request(3, sender="para3", receivers=("phy",)))
    assert arbitrate_speakers([p1, p3], cfg) == ([p1], [p3])


def test_baseline_passthrough():
    pending = [("phy", request(1)), ("para1", request(2, sender="para1", receivers=("phy",))),
               ("para3", request(3, sender="para3", receivers=("phy",)))]
    granted, deferred = arbitrate_speakers(pending, ProtocolConfig())
    assert len(granted) == 3 and deferred == []


# ------------------------------------------------------------ categories
@pytest.mark.parametrize("p,cat", [
    (Performative.REQUEST, FipaCategory.PERF_ACTIONS),
    (Performative.REQUEST_WHEN, FipaCategory.PERF_ACTIONS),
    (Performative.AGREE, FipaCategory.PERF_ACTIONS),
    (Performative.REFUSE, FipaCategory.PERF_ACTIONS),
    (Performative.QUERY_REF, FipaCategory.REQUEST_INFO),
    (Performative.INFORM, FipaCategory.PASSING_INFO),
    (Performative.CONFIRM, FipaCategory.PASSING_INFO),
    (Performative.FAILURE, FipaCategory.ERROR_HAND),
    (Performative.NOT_UNDERSTOOD, FipaCategory.ERROR_HAND),
])
def test_fipa_category(p, cat):
    assert fipa_category(p) is cat


def test_variant_flags():
    assert Variant.CLOSED_LOOP_LEADER_MEDIATED.closed_loop and Variant.CLOSED_LOOP_LEADER_MEDIATED.leader_mediated
    assert not Variant.BASELINE.closed_loop and not Variant.BASELINE.leader_mediated
    assert ProtocolConfig(variant="closed_loop").variant is Variant.CLOSED_LOOP
