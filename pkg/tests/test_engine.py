from collections import Counter

import pytest

from resusim import engine as E
from resusim.agents import Task
from resusim.domain import IntegrityFault, PatientState, RhythmKind, RhythmState
from resusim.scenario import PatientDynamics, ScenarioError

VARIANTS = ["baseline", "closed_loop", "leader_mediated", "closed_loop_leader_mediated"]
DYN = PatientDynamics()


def pulseless(health=0.7):
    return PatientState(health, False, RhythmState(RhythmKind.VF, 140), 60.0, 65)


# ---------------------------------------------------------------- patient
def test_perfusing_at_ceiling_stays():
    p = PatientState(1.0, True, RhythmState(RhythmKind.NORMAL_SINUS, 72), 40.0, 65)
    assert E.update_patient(p, False, DYN).health == 1.0


def test_hundred_seconds_no_flow():
    p = pulseless()
    for _ in range(100):
        p = E.update_patient(p, False, DYN)
    assert p.health == pytest.approx(0.6, abs=1e-9)


def test_cpr_slows_decay_and_co2_targets():
    p = q = pulseless()
    for _ in range(50):
        p = E.update_patient(p, True, DYN)
        q = E.update_patient(q, False, DYN)
    assert p.health == pytest.approx(0.7 - 50 * DYN.d_cpr)
    assert p.co2 == pytest.approx(35.0) and q.co2 == pytest.approx(80.0)


def test_zero_health_forces_asystole():
    p = E.update_patient(pulseless(0.0005), False, DYN)
    assert p.health == 0.0 and p.rhythm.kind is RhythmKind.ASYSTOLE and p.rhythm.rate == 0


# -------------------------------------------------------------------- run
def test_invalid_scenario_does_not_run(scenario):
    bad = scenario.with_changes(max_ticks=0)
    with pytest.raises(ScenarioError):
        E.run(bad, 0)


@pytest.mark.parametrize("variant", VARIANTS)
def test_replay_is_byte_identical(scenario, variant):
    sc = scenario.with_variant(variant)
    a = E.events_to_jsonl(E.run(sc, 42)[1])
    b = E.events_to_jsonl(E.run(sc, 42)[1])
    assert a == b


@pytest.mark.parametrize("variant", VARIANTS)
def test_tick_skipping_is_invisible(scenario, variant):
    sc = scenario.with_variant(variant)
    for seed in range(15):
        fast = E.events_to_jsonl(E.run(sc, seed, skip_quiet=True)[1])
        slow = E.events_to_jsonl(E.run(sc, seed, skip_quiet=False)[1])
        assert fast == slow, seed


def test_leader_directs_first(scenario):
    for seed in range(100):
        _, events = E.run(scenario, seed)
        first_cpr = next(i for i, e in enumerate(events)
                         if e["event_type"] == "action_start" and e["content"]["action"] == "chest_compressions_30")
        assert any(e["event_type"] == "send" and e["performative"] == "Request" for e in events[:first_cpr])


@pytest.mark.parametrize("variant", VARIANTS)
def test_result_matches_log(scenario, variant):
    sc = scenario.with_variant(variant)
    for seed in range(20):
        r, events = E.run(sc, seed)
        ticks = [e["tick"] for e in events]
        assert ticks == sorted(ticks) and ticks[0] == 0 and ticks[-1] == r.total_seconds
        assert 0 <= r.no_flow_seconds <= r.total_seconds
        sends = Counter(e["performative"] for e in events if e["event_type"] == "send")
        assert r.message_counts == dict(sorted(sends.items()))
        assert r.total_messages == sum(sends.values())
        assert sum(r.category_counts.values()) == r.total_messages
        kinds = Counter(e["event_type"] for e in events)
        assert r.error_events == kinds["error"]
        assert r.failure_events == kinds["failure"]
        assert r.shocks == kinds["shock"]
        assert r.drugs_given == [e["content"]["drug"] for e in events if e["event_type"] == "drug_given"]
        end = events[-1]
        assert end["event_type"] == "run_end" and end["outcome"] == r.outcome
        assert end["content"] == {"total_seconds": r.total_seconds, "no_flow_seconds": r.no_flow_seconds}


def test_health_changes_smoothly(scenario):
    d = scenario.dynamics
    sim = E.Simulation(scenario, 3, skip_quiet=False)
    sim.start()
    last = sim.health
    while sim.outcome is None:
        sim.step()
        assert abs(sim.health - last) <= max(d.d_noflow, d.r_rosc) + 1e-12
        last = sim.health


def test_quiet_tick_has_no_speech(scenario):
    # Nothing queued to say, nothing heard, nobody finishing: the tick only
    # advances clocks.
    sim = E.Simulation(scenario, 5, skip_quiet=False)
    sim.start()
    checked = 0
    while sim.outcome is None:
        quiet = (
            not any(a.outbox or (a.tracker and a.tracker.pending) for a in sim.team)
            and not any(sim.heard.values())
            and all(a.current is None or a.current.remaining > 1 for a in sim.team)
            and sim._wake_tick() > sim.tick + 1
        )
        n = len(sim.events)
        sim.step()
        if quiet:
            checked += 1
            assert sim.events[n:] == []
    assert checked > 0


def test_rhythm_check_on_the_120th_cpr_second(scenario):
    _, events = E.run(scenario, 0)
    checks = [e for e in events if e["event_type"] == "rhythm_check"]
    assert checks and all(e["content"]["cycle_clock"] == 120 for e in checks)
    phases = [e for e in events if e["event_type"] == "phase" and e["content"]["to"] == "CprCycle"]
    assert checks[0]["tick"] - phases[0]["tick"] == 120


def test_starting_while_busy_is_integrity_fault(scenario):
    sim = E.Simulation(scenario, 0)
    sim.start()
    agent = sim.team[1]
    agent.current = Task("chest_compressions_30", remaining=5)
    with pytest.raises(IntegrityFault):
        sim._start(agent, Task("check_pulse"))


def test_batch_reports_fault_per_seed(scenario, monkeypatch):
    real_step = E.Simulation.step

    def faulty(self):
        if self.seed == 2 and self.tick == 10:
            raise IntegrityFault("injected")
        real_step(self)

    monkeypatch.setattr(E.Simulation, "step", faulty)
    results = E.run_many(scenario, range(4))
    assert [r["seed"] for r in results] == [0, 1, 2, 3]
    assert "injected" in results[2]["error"]
    assert all("error" not in r for i, r in enumerate(results) if i != 2)
    summary = E.summarize(results)
    assert summary["n_completed"] == 3 and summary["errors"][0]["seed"] == 2


# ------------------------------------------------------------ monte carlo
def test_single_run_batch_equals_run(scenario):
    summary = E.monte_carlo(scenario, 1, base_seed=9)
    r, _ = E.run(scenario, 9)
    assert summary["runs"] == [r.to_dict()]
    assert summary["total_seconds"]["mean"] == r.total_seconds
    assert summary["no_flow_seconds"]["median"] == r.no_flow_seconds
    assert summary["rosc_rate"] == (1.0 if r.outcome == "ROSC" else 0.0)


def test_batch_independent_of_parallelism(scenario):
    a = E.monte_carlo(scenario, 12, base_seed=100, parallelism=1)
    b = E.monte_carlo(scenario, 12, base_seed=100, parallelism=3)
    assert a == b


def test_monte_carlo_needs_runs(scenario):
    with pytest.raises(ValueError):
        E.monte_carlo(scenario, 0)


def test_pre_arrival_lowers_starting_health(scenario):
    sim = E.Simulation(scenario.with_changes(pre_arrival_no_flow=60), 0)
    assert sim.health == pytest.approx(scenario.patient.health - 60 * scenario.dynamics.d_noflow)
    r, _ = E.run(scenario.with_changes(pre_arrival_no_flow=60), 0)
    assert r.no_flow_seconds <= r.total_seconds
