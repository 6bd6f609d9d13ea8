import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resusim import als as A
from resusim import engine as E
from resusim import metrics as M
from resusim.agents import AgentRuntime, add_tiredness
from resusim.comms import ProtocolConfig, mishear_probability
from resusim.domain import (
    ActionSpec, AgentProfile, ContentCategory, PatientState, RhythmKind, RhythmState, Role,
    Shockability, classify_shockability, duration_multiplier, sample_duration,
)
from resusim.scenario import default_scenario

unit = st.floats(0.0, 1.0, allow_nan=False)
small_samples = st.lists(st.integers(0, 30), min_size=1, max_size=12)


def rhythms():
    return st.sampled_from(list(RhythmKind)).flatmap(
        lambda k: st.builds(RhythmState, st.just(k), st.just(0) if k is RhythmKind.ASYSTOLE else st.integers(0, 150))
    )


# ------------------------------------------------------------ statistics
@given(small_samples, small_samples)
def test_u_statistics_sum_to_nm(a, b):
    assert M.u_statistic(a, b) + M.u_statistic(b, a) == len(a) * len(b)


@given(small_samples, small_samples)
def test_p_value_is_symmetric_and_bounded(a, b):
    ua, pa = M.mann_whitney_u(a, b)
    ub, pb = M.mann_whitney_u(b, a)
    assert 0.0 <= pa <= 1.0
    assert pa == pytest.approx(pb, rel=1e-12)
    assert 0 <= ua <= len(a) * len(b)


@given(st.integers(1, 9), st.integers(1, 9))
def test_null_distribution_is_symmetric(n, m):
    counts = M.mw_null_counts(n, m)
    assert counts == counts[::-1]


@given(st.dictionaries(st.text(min_size=1, max_size=4), st.integers(0, 1000), min_size=1, max_size=12))
def test_percentages_sum_to_100(counts):
    total = sum(counts.values())
    pct = M._percentages(counts, total)
    if total:
        assert round(sum(pct.values()), 2) == 100.0
        for k, v in counts.items():
            assert abs(pct[k] - 100 * v / total) < 0.01 + 1e-9
    else:
        assert set(pct.values()) <= {0.0}


# ---------------------------------------------------------------- domain
@given(rhythms(), unit, st.booleans(), st.floats(0, 100), st.integers(0, 110))
def test_shockability_depends_on_rhythm_only(rhythm, health, breathing, co2, age):
    PatientState(health, breathing, rhythm, co2, age)
    expected = {
        RhythmKind.VF: Shockability.SHOCKABLE,
        RhythmKind.PULSELESS_VT: Shockability.SHOCKABLE,
        RhythmKind.NORMAL_SINUS: Shockability.PERFUSING,
    }.get(rhythm.kind, Shockability.UNSHOCKABLE)
    assert classify_shockability(rhythm) is expected
    assert classify_shockability(RhythmState(rhythm.kind, rhythm.rate)) is expected


@given(st.integers(1, 60), st.integers(0, 60), unit, unit, unit, st.integers(0, 2**32))
def test_duration_bounds(lo, extra, stress, tired, exp, seed):
    hi = lo + extra
    spec = ActionSpec("x", frozenset(), lo, hi, 1.0, ContentCategory.MEDICAL_ACTION)
    prof = AgentProfile("a", Role.PARAMEDIC1, stress, tired, exp)
    d = sample_duration(spec, prof, random.Random(seed))
    mult = duration_multiplier(prof)
    assert 1.0 <= mult <= 1.75
    assert max(1, int(lo * mult + 0.5)) <= d <= int(hi * mult + 0.5)


@given(st.integers(1, 6), unit, unit, unit, unit)
def test_mishear_probability_is_clamped_and_monotone(speakers, fam, base, noise, bonus):
    cfg = ProtocolConfig(base_mishear=base, noise_coefficient=noise, familiarity_bonus=bonus)
    p = mishear_probability(speakers, fam, cfg)
    assert 0.0 <= p <= 0.95
    assert mishear_probability(speakers + 1, fam, cfg) >= p
    assert mishear_probability(speakers, 1.0, cfg) <= mishear_probability(speakers, 0.0, cfg)


@given(unit, st.lists(st.floats(0, 0.5), max_size=80))
def test_tiredness_never_exceeds_one(start, increments):
    agent = AgentRuntime(AgentProfile("p", Role.PARAMEDIC1, tiredness=start))
    for inc in increments:
        add_tiredness(agent, inc)
        assert 0.0 <= agent.tiredness <= 1.0


# ------------------------------------------------------------ physiology
@given(unit, st.floats(0, 100), rhythms(), st.booleans(), st.integers(1, 50))
def test_patient_stays_in_range(health, co2, rhythm, flow, steps):
    dyn = default_scenario().dynamics
    p = PatientState(health, True, rhythm, co2, 60)
    for _ in range(steps):
        q = E.update_patient(p, flow, dyn)
        assert 0.0 <= q.health <= 1.0 and 0.0 <= q.co2 <= 100.0
        if p.pulse_present:
            assert q.health >= p.health
        else:
            assert q.health <= p.health
        if q.health == 0.0:
            assert q.rhythm.kind is RhythmKind.ASYSTOLE
        p = q


@given(st.integers(0, 119), st.lists(st.integers(0, 40), max_size=10))
def test_cycle_clock_stops_at_the_rhythm_check(start, steps):
    s = A.AlsState(phase=A.Phase.CPR_CYCLE, cycle_clock=start)
    for k in steps:
        before = s.cycle_clock
        s = A.advance_clock(s, k)
        assert s.cycle_clock <= A.CYCLE_SECONDS
        if s.phase is A.Phase.CPR_CYCLE:
            assert s.cycle_clock == before + k
        else:
            assert s.phase is A.Phase.RHYTHM_CHECK and s.cycle_clock == A.CYCLE_SECONDS


# ------------------------------------------------------------ whole runs
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["baseline", "closed_loop", "leader_mediated",
                                               "closed_loop_leader_mediated"]))
def test_run_invariants(seed, variant):
    result, events = E.run(default_scenario().with_variant(variant), seed)
    ticks = [e["tick"] for e in events]
    assert ticks == sorted(ticks)
    assert events[0]["event_type"] == "run_start" and events[-1]["event_type"] == "run_end"
    assert 0 <= result.no_flow_seconds <= result.total_seconds
    assert M.no_flow_from_log(events) == result.no_flow_seconds
    assert M.structural_no_flow(events) <= result.no_flow_seconds
    assert result.total_messages == sum(1 for e in events if e["event_type"] == "send")
