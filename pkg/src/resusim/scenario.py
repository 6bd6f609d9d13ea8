"""Scenario files: schema, defaults, loading and validation.

Scenarios are JSON objects. Keys starting with ``_`` are comments and are
ignored everywhere. See docs/scenario_format.md for the full schema.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Union

from .agents import AgentConfig
from .als import AlsConfig
from .comms import ProtocolConfig, Variant
from .domain import (
    REQUIRED_ACTIONS,
    ActionSpec,
    AgentProfile,
    ContentCategory,
    DefibrillationModel,
    DurationWeights,
    PatientState,
    RhythmKind,
    RhythmState,
    Role,
)


class ScenarioError(ValueError):
    """Scenario cannot be run; ``violations`` lists every problem found."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass(frozen=True)
class PatientDynamics:
    d_noflow: float = 0.0010
    d_cpr: float = 0.0002
    r_rosc: float = 0.0005
    co2_rate: float = 0.5
    co2_flow_target: float = 35.0
    co2_noflow_target: float = 80.0


@dataclass(frozen=True)
class ScenarioConfig:
    patient: PatientState
    team: tuple
    catalog: dict
    protocol: ProtocolConfig = ProtocolConfig()
    dynamics: PatientDynamics = PatientDynamics()
    als: AlsConfig = AlsConfig()
    agents: AgentConfig = AgentConfig()
    defibrillation: DefibrillationModel = DefibrillationModel()
    max_ticks: int = 3600
    pre_arrival_no_flow: int = 0

    @property
    def futility_limit(self) -> int:
        return self.als.futility_limit

    def with_variant(self, variant) -> "ScenarioConfig":
        return self.with_protocol(variant=Variant(variant))

    def with_protocol(self, **changes) -> "ScenarioConfig":
        return replace(self, protocol=replace(self.protocol, **changes))

    def with_changes(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


def _strip_comments(obj):
    if isinstance(obj, dict):
        return {k: _strip_comments(v) for k, v in obj.items() if not k.startswith("_")}
    if isinstance(obj, list):
        return [_strip_comments(v) for v in obj]
    return obj


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _in_unit(x) -> bool:
    return _is_num(x) and 0.0 <= x <= 1.0


def validate_scenario(scenario: Union[dict, ScenarioConfig]) -> list:
    """Return every problem that would stop the scenario from running.

    Accepts a parsed scenario file or a ScenarioConfig. An empty list means
    the scenario is runnable.
    """
    data = scenario_to_dict(scenario) if isinstance(scenario, ScenarioConfig) else _strip_comments(scenario)
    out = []
    if not isinstance(data, dict):
        return ["scenario: expected a JSON object"]

    p = data.get("patient")
    if not isinstance(p, dict):
        out.append("patient: missing")
    else:
        if not _in_unit(p.get("health")):
            out.append(f"patient.health: {p.get('health')!r} not in [0, 1]")
        if not isinstance(p.get("breathing", False), bool):
            out.append("patient.breathing: must be a boolean")
        if not (_is_num(p.get("co2")) and 0 <= p["co2"] <= 100):
            out.append(f"patient.co2: {p.get('co2')!r} not in [0, 100]")
        if not isinstance(p.get("age"), int) or p["age"] < 0:
            out.append(f"patient.age: {p.get('age')!r} not a non-negative integer")
        r = p.get("rhythm")
        if not isinstance(r, dict):
            out.append("patient.rhythm: missing")
        else:
            kinds = {k.value for k in RhythmKind}
            if r.get("kind") not in kinds:
                out.append(f"patient.rhythm.kind: {r.get('kind')!r} not one of {sorted(kinds)}")
            rate = r.get("rate")
            if not isinstance(rate, int) or not 0 <= rate <= 150:
                out.append(f"patient.rhythm.rate: {rate!r} not an integer in [0, 150]")
            elif r.get("kind") == RhythmKind.ASYSTOLE.value and rate != 0:
                out.append("patient.rhythm.rate: asystole must have rate 0")

    team = data.get("team")
    ids = set()
    if not isinstance(team, list):
        out.append("team: missing")
        team = []
    else:
        if not all(isinstance(a, dict) for a in team):
            out.append("team: every agent must be an object")
            team = [a for a in team if isinstance(a, dict)]
        if len(team) != 4:
            out.append(f"team: expected exactly 4 agents, got {len(team)}")
        roles = {}
        for i, a in enumerate(team):
            aid = a.get("id", f"#{i}")
            if aid in ids:
                out.append(f"team: duplicate agent id {aid!r}")
            ids.add(aid)
            role = a.get("role")
            if role not in {r.value for r in Role}:
                out.append(f"agent {aid}.role: {role!r} is not a known role")
            else:
                roles.setdefault(role, []).append(aid)
            for attr in ("stress", "tiredness", "experience"):
                if not _in_unit(a.get(attr, 0.0)):
                    out.append(f"agent {aid}.{attr}: {a.get(attr)!r} not in [0, 1]")
        for role, holders in roles.items():
            if len(holders) > 1:
                out.append(f"team: role {role} held by {len(holders)} agents ({', '.join(holders)})")
        for r in Role:
            if r.value not in roles and len(team) == 4:
                out.append(f"team: no agent with role {r.value}")
        for a in team:
            for other, v in (a.get("familiarity") or {}).items():
                if other not in ids:
                    out.append(f"agent {a.get('id')}.familiarity: unknown agent {other!r}")
                if not _in_unit(v):
                    out.append(f"agent {a.get('id')}.familiarity.{other}: {v!r} not in [0, 1]")

    catalog = data.get("catalog")
    seen = set()
    if not isinstance(catalog, list):
        out.append("catalog: missing")
        catalog = []
    for c in catalog:
        if not isinstance(c, dict):
            out.append(f"catalog: entry {c!r} is not an object")
            continue
        cid = c.get("action_id")
        seen.add(cid)
        dur = c.get("duration")
        if not (isinstance(dur, list) and len(dur) == 2 and all(isinstance(d, int) for d in dur)):
            out.append(f"action {cid}.duration: expected [min, max] integer seconds")
        elif not 1 <= dur[0] <= dur[1]:
            out.append(f"action {cid}.duration: need 1 <= min <= max, got {dur}")
        b = c.get("base_success")
        if not (_is_num(b) and 0.0 < b <= 1.0):
            out.append(f"action {cid}.base_success: {b!r} not in (0, 1]")
        if c.get("category") not in {k.value for k in ContentCategory}:
            out.append(f"action {cid}.category: {c.get('category')!r} unknown")
        for r in c.get("allowed_roles", []):
            if r not in {x.value for x in Role}:
                out.append(f"action {cid}.allowed_roles: unknown role {r!r}")
    for req in REQUIRED_ACTIONS:
        if req not in seen:
            out.append(f"catalog: missing required action {req!r}")

    proto = data.get("protocol", {})
    if proto.get("variant", "baseline") not in {v.value for v in Variant}:
        out.append(f"protocol.variant: {proto.get('variant')!r} not one of {[v.value for v in Variant]}")
    bm = proto.get("base_mishear", 0.08)
    if not (_is_num(bm) and 0.0 <= bm < 1.0):
        out.append(f"protocol.base_mishear: {bm!r} not in [0, 1)")
    nc = proto.get("noise_coefficient", 0.15)
    if not (_is_num(nc) and nc >= 0):
        out.append(f"protocol.noise_coefficient: {nc!r} must be >= 0")
    fb = proto.get("familiarity_bonus", 0.5)
    if not (_is_num(fb) and 0.0 <= fb < 1.0):
        out.append(f"protocol.familiarity_bonus: {fb!r} not in [0, 1)")
    at = proto.get("ack_timeout", 4)
    if not isinstance(at, int) or at < 1:
        out.append(f"protocol.ack_timeout: {at!r} must be an integer >= 1")
    mr = proto.get("max_retransmits", 3)
    if not isinstance(mr, int) or mr < 1:
        out.append(f"protocol.max_retransmits: {mr!r} must be an integer >= 1")

    als = data.get("als", {})
    fl = als.get("futility_limit", 1800)
    if not isinstance(fl, int) or fl < 1:
        out.append(f"als.futility_limit: {fl!r} must be a positive integer")
    every = als.get("unshockable_adrenaline_every", 2)
    if not isinstance(every, int) or every < 1:
        out.append(f"als.unshockable_adrenaline_every: {every!r} must be a positive integer")
    mt = data.get("max_ticks", 3600)
    if not isinstance(mt, int) or mt < 1:
        out.append(f"max_ticks: {mt!r} must be a positive integer")
    pre = data.get("pre_arrival_no_flow", 0)
    if not isinstance(pre, int) or pre < 0:
        out.append(f"pre_arrival_no_flow: {pre!r} must be a non-negative integer")
    for key, val in data.get("dynamics", {}).items():
        if not (_is_num(val) and val >= 0):
            out.append(f"dynamics.{key}: {val!r} must be a non-negative number")
    ag = data.get("agents", {})
    for key in ("staleness_window", "hang_timeout"):
        v = ag.get(key, 1)
        if not isinstance(v, int) or v < 1:
            out.append(f"agents.{key}: {v!r} must be a positive integer")
    return out


def _build(data: dict) -> ScenarioConfig:
    p = data["patient"]
    patient = PatientState(
        health=p["health"],
        breathing=p.get("breathing", False),
        rhythm=RhythmState(RhythmKind(p["rhythm"]["kind"]), p["rhythm"]["rate"]),
        co2=p["co2"],
        age=p["age"],
    )
    team = tuple(
        AgentProfile(
            id=a["id"],
            role=Role(a["role"]),
            stress=a.get("stress", 0.0),
            tiredness=a.get("tiredness", 0.0),
            experience=a.get("experience", 1.0),
            familiarity=dict(a.get("familiarity") or {}),
        )
        for a in data["team"]
    )
    catalog = {
        c["action_id"]: ActionSpec(
            action_id=c["action_id"],
            allowed_roles=frozenset(Role(r) for r in c.get("allowed_roles", [])),
            duration_min=c["duration"][0],
            duration_max=c["duration"][1],
            base_success=c["base_success"],
            category=ContentCategory(c["category"]),
            interruptible=c.get("interruptible", False),
        )
        for c in data["catalog"]
    }
    ag = dict(data.get("agents", {}))
    if "duration_weights" in ag:
        ag["duration_weights"] = DurationWeights(**ag["duration_weights"])
    return ScenarioConfig(
        patient=patient,
        team=team,
        catalog=catalog,
        protocol=ProtocolConfig(**data.get("protocol", {})),
        dynamics=PatientDynamics(**data.get("dynamics", {})),
        als=AlsConfig(**data.get("als", {})),
        agents=AgentConfig(**ag),
        defibrillation=DefibrillationModel(**data.get("defibrillation", {})),
        max_ticks=data.get("max_ticks", 3600),
        pre_arrival_no_flow=data.get("pre_arrival_no_flow", 0),
    )


def scenario_from_dict(data: dict) -> ScenarioConfig:
    data = _strip_comments(data)
    problems = validate_scenario(data)
    if problems:
        raise ScenarioError(problems)
    return _build(data)


def scenario_to_dict(s: ScenarioConfig) -> dict:
    return {
        "patient": {
            "health": s.patient.health,
            "breathing": s.patient.breathing,
            "rhythm": {"kind": s.patient.rhythm.kind.value, "rate": s.patient.rhythm.rate},
            "co2": s.patient.co2,
            "age": s.patient.age,
        },
        "team": [
            {
                "id": a.id, "role": a.role.value, "stress": a.stress, "tiredness": a.tiredness,
                "experience": a.experience, "familiarity": dict(a.familiarity),
            }
            for a in s.team
        ],
        "catalog": [
            {
                "action_id": c.action_id,
                "allowed_roles": sorted(r.value for r in c.allowed_roles),
                "duration": [c.duration_min, c.duration_max],
                "base_success": c.base_success,
                "category": c.category.value,
                "interruptible": c.interruptible,
            }
            for c in s.catalog.values()
        ],
        "protocol": {f.name: _plain(getattr(s.protocol, f.name)) for f in fields(s.protocol)},
        "dynamics": asdict(s.dynamics),
        "als": asdict(s.als),
        "agents": {**asdict(s.agents)},
        "defibrillation": asdict(s.defibrillation),
        "max_ticks": s.max_ticks,
        "pre_arrival_no_flow": s.pre_arrival_no_flow,
    }


def _plain(v):
    return v.value if isinstance(v, Variant) else v


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def default_scenario_dict() -> dict:
    text = resources.files("resusim.data").joinpath("default.scenario").read_text(encoding="utf-8")
    return json.loads(text)


def default_scenario() -> ScenarioConfig:
    return scenario_from_dict(default_scenario_dict())
