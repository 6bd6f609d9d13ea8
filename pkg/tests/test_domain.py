import math
import random
import statistics

import pytest

from resusim.domain import (
    ActionSpec,
    AgentProfile,
    ContentCategory,
    DefibrillationModel,
    DurationWeights,
    PatientState,
    RhythmKind,
    RhythmState,
    Role,
    Shockability,
    classify_shockability,
    duration_multiplier,
    roll_success,
    sample_duration,
    success_probability,
)
from resusim.scenario import validate_scenario

NEUTRAL = AgentProfile("x", Role.PARAMEDIC1, stress=0.0, tiredness=0.0, experience=1.0)


def spec(lo, hi, p=0.9, action="install_iv"):
    return ActionSpec(action, frozenset(), lo, hi, p, ContentCategory.MEDICAL_ACTION)


def patient(health=0.5, age=40, kind=RhythmKind.VF, rate=140):
    return PatientState(health, False, RhythmState(kind, rate), 50.0, age)


# ------------------------------------------------------------ rhythms
@pytest.mark.parametrize("kind,rate,expected", [
    (RhythmKind.VF, 140, Shockability.SHOCKABLE),
    (RhythmKind.PULSELESS_VT, 150, Shockability.SHOCKABLE),
    (RhythmKind.ASYSTOLE, 0, Shockability.UNSHOCKABLE),
    (RhythmKind.PEA, 40, Shockability.UNSHOCKABLE),
    (RhythmKind.NORMAL_SINUS, 72, Shockability.PERFUSING),
])
def test_shockability_table(kind, rate, expected):
    assert classify_shockability(RhythmState(kind, rate)) is expected


def test_asystole_needs_rate_zero():
    with pytest.raises(ValueError):
        RhythmState(RhythmKind.ASYSTOLE, 10)


@pytest.mark.parametrize("rate", [-1, 151])
def test_rate_range(rate):
    with pytest.raises(ValueError):
        RhythmState(RhythmKind.VF, rate)


def test_patient_clamps_and_pulse():
    p = PatientState(1.4, False, RhythmState(RhythmKind.NORMAL_SINUS, 72), 130.0, 50)
    assert p.health == 1.0 and p.co2 == 100.0 and p.pulse_present
    assert not patient().pulse_present


# ----------------------------------------------------------- durations
def test_neutral_profile_multiplier_is_one():
    assert duration_multiplier(NEUTRAL) == 1.0
    rng = random.Random(1)
    assert all(4 <= sample_duration(spec(4, 8), NEUTRAL, rng) <= 8 for _ in range(2000))


def test_worst_profile_multiplier():
    worst = AgentProfile("x", Role.PARAMEDIC1, stress=1.0, tiredness=1.0, experience=0.0)
    assert duration_multiplier(worst) == pytest.approx(1.75)


def test_degenerate_range_with_stress():
    p = AgentProfile("x", Role.PARAMEDIC1, stress=0.4, tiredness=0.0, experience=1.0)
    assert sample_duration(spec(10, 10), p, random.Random(0)) == 11


def test_neutral_mean_is_midpoint():
    rng = random.Random(7)
    s = spec(20, 40)
    mean = statistics.fmean(sample_duration(s, NEUTRAL, rng) for _ in range(100_000))
    assert mean == pytest.approx(30, rel=0.02)


def test_duration_weights_configurable():
    p = AgentProfile("x", Role.PARAMEDIC1, stress=1.0, tiredness=0.0, experience=1.0)
    assert duration_multiplier(p, DurationWeights(stress=1.0)) == 2.0


# ------------------------------------------------------------- success
def test_certain_action_always_succeeds():
    rng = random.Random(3)
    assert all(roll_success(spec(1, 2, p=1.0), patient(), rng) for _ in range(1000))


def test_defibrillation_factors():
    d = DefibrillationModel()
    assert d.age_factor(40) == 1.0
    assert d.age_factor(80) == pytest.approx(0.8)
    assert d.age_factor(500) == 0.5
    assert d.health_factor(0.5) == 0.75
    assert d.health_factor(0.0) == 0.5
    shock = spec(8, 15, p=0.4, action="charge_and_shock")
    assert success_probability(shock, patient(0.5, 40)) == pytest.approx(0.30)


def test_success_floor():
    shock = spec(8, 15, p=0.011, action="charge_and_shock")
    assert success_probability(shock, patient(0.0, 200)) == 0.01


def test_defibrillation_empirical_rate():
    # Monte Carlo oracle for the closed-form 0.4 * 1.0 * 0.75.
    shock = spec(8, 15, p=0.4, action="charge_and_shock")
    rng = random.Random(11)
    n = 100_000
    rate = sum(roll_success(shock, patient(0.5, 40), rng) for _ in range(n)) / n
    assert abs(rate - 0.30) <= 0.01
    assert abs(rate - 0.30) <= 3 * math.sqrt(0.3 * 0.7 / n)


def test_non_defib_ignores_patient():
    s = spec(1, 2, p=0.85)
    assert success_probability(s, patient(0.0, 99)) == 0.85


# ---------------------------------------------------------- validation
def test_default_validates(scenario_dict):
    assert validate_scenario(scenario_dict) == []


def test_stress_out_of_range(scenario_dict):
    scenario_dict["team"][1]["stress"] = 1.3
    problems = validate_scenario(scenario_dict)
    assert len(problems) == 1
    assert "para1" in problems[0] and "stress" in problems[0]


def test_two_physicians(scenario_dict):
    scenario_dict["team"][1]["role"] = "Physician"
    problems = validate_scenario(scenario_dict)
    role_problems = [p for p in problems if "held by" in p]
    assert len(role_problems) == 1 and "Physician" in role_problems[0]


def test_zero_base_success_rejected(scenario_dict):
    scenario_dict["catalog"][0]["base_success"] = 0.0
    assert any("base_success" in p for p in validate_scenario(scenario_dict))


def test_missing_action_rejected(scenario_dict):
    scenario_dict["catalog"] = [c for c in scenario_dict["catalog"] if c["action_id"] != "check_pulse"]
    assert any("check_pulse" in p for p in validate_scenario(scenario_dict))
