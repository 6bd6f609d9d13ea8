"""Core value types, the action catalog and the stochastic action primitives."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Mapping



class IntegrityFault(RuntimeError):
    """A run or its log reached an internally inconsistent state."""


class RhythmKind(str, enum.Enum):
    NORMAL_SINUS = "NormalSinus"
    VF = "VF"
    PULSELESS_VT = "PulselessVT"
    ASYSTOLE = "Asystole"
    PEA = "PEA"


class Shockability(str, enum.Enum):
    SHOCKABLE = "Shockable"
    UNSHOCKABLE = "Unshockable"
    PERFUSING = "Perfusing"


class Role(str, enum.Enum):
    PHYSICIAN = "Physician"
    PARAMEDIC1 = "Paramedic1"
    PARAMEDIC2 = "Paramedic2"
    PARAMEDIC3 = "Paramedic3"


# Canonical processing order inside a tick. Every per-agent loop uses it so
# random draws happen in the same sequence on every replay.
ROLE_ORDER = (Role.PHYSICIAN, Role.PARAMEDIC1, Role.PARAMEDIC2, Role.PARAMEDIC3)


class ContentCategory(str, enum.Enum):
    MEDICAL_ACTION = "MedicalAction"
    TIME = "Time"
    MEDICINE_ADMINISTRATION = "MedicineAdministration"
    PATIENT_STATUS = "PatientStatus"
    EQUIPMENT_STATUS = "EquipmentStatus"


_SHOCKABILITY = {
    RhythmKind.VF: Shockability.SHOCKABLE,
    RhythmKind.PULSELESS_VT: Shockability.SHOCKABLE,
    RhythmKind.ASYSTOLE: Shockability.UNSHOCKABLE,
    RhythmKind.PEA: Shockability.UNSHOCKABLE,
    RhythmKind.NORMAL_SINUS: Shockability.PERFUSING,
}


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class RhythmState:
    kind: RhythmKind
    rate: int

    def __post_init__(self):
        if not 0 <= self.rate <= 150:
            raise ValueError(f"rhythm rate {self.rate} outside [0, 150]")
        if self.kind is RhythmKind.ASYSTOLE and self.rate != 0:
            raise ValueError("asystole must have rate 0")


@dataclass(frozen=True)
class PatientState:
    health: float
    breathing: bool
    rhythm: RhythmState
    co2: float
    age: int

    def __post_init__(self):
        object.__setattr__(self, "health", clamp(float(self.health), 0.0, 1.0))
        object.__setattr__(self, "co2", clamp(float(self.co2), 0.0, 100.0))

    @property
    def pulse_present(self) -> bool:
        return self.rhythm.kind is RhythmKind.NORMAL_SINUS


@dataclass(frozen=True)
class AgentProfile:
    id: str
    role: Role
    stress: float = 0.0
    tiredness: float = 0.0
    experience: float = 1.0
    familiarity: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ActionSpec:
    action_id: str
    allowed_roles: frozenset
    duration_min: int
    duration_max: int
    base_success: float
    category: ContentCategory
    interruptible: bool = False

    def permits(self, role: Role) -> bool:
        return not self.allowed_roles or role in self.allowed_roles


@dataclass(frozen=True)
class DurationWeights:
    stress: float = 0.25
    tiredness: float = 0.25
    inexperience: float = 0.25


@dataclass(frozen=True)
class DefibrillationModel:
    """Linear maps from patient age and health onto a shock success multiplier."""

    reference_age: int = 40
    age_slope: float = 0.005
    age_floor: float = 0.5
    health_floor: float = 0.5
    success_floor: float = 0.01

    def age_factor(self, age: int) -> float:
        return clamp(1.0 - self.age_slope * max(0, age - self.reference_age), self.age_floor, 1.0)

    def health_factor(self, health: float) -> float:
        return clamp(0.5 + health / 2.0, self.health_floor, 1.0)


DEFIBRILLATION_ACTION = "charge_and_shock"

# Action ids used by the resuscitation state machine and the agents.
REQUIRED_ACTIONS = (
    "chest_compressions_30",
    "ventilate_x2",
    "attach_defib_pads",
    "charge_and_shock",
    "check_pulse",
    "intubate",
    "install_iv",
    "prepare_drug",
    "inject_drug",
)


def classify_shockability(rhythm: RhythmState) -> Shockability:
    return _SHOCKABILITY[rhythm.kind]


def duration_multiplier(profile: AgentProfile, weights: DurationWeights = DurationWeights()) -> float:
    return (
        1.0
        + weights.stress * profile.stress
        + weights.tiredness * profile.tiredness
        + weights.inexperience * (1.0 - profile.experience)
    )


def sample_duration(
    spec: ActionSpec,
    profile: AgentProfile,
    rng: random.Random,
    weights: DurationWeights = DurationWeights(),
) -> int:
    """Draw an action duration in whole seconds.

    A uniform draw over the catalog range is stretched by the performer's
    stress, tiredness and inexperience, then rounded half-up.
    """
    u = rng.uniform(spec.duration_min, spec.duration_max)
    return max(1, int(u * duration_multiplier(profile, weights) + 0.5))


def success_probability(
    spec: ActionSpec, patient: PatientState, defib: DefibrillationModel = DefibrillationModel()
) -> float:
    if spec.action_id != DEFIBRILLATION_ACTION:
        return spec.base_success
    p = spec.base_success * defib.age_factor(patient.age) * defib.health_factor(patient.health)
    return clamp(p, defib.success_floor, 1.0)


def roll_success(
    spec: ActionSpec,
    patient: PatientState,
    rng: random.Random,
    defib: DefibrillationModel = DefibrillationModel(),
) -> bool:
    return rng.random() < success_probability(spec, patient, defib)


def with_health(patient: PatientState, health: float) -> PatientState:
    return replace(patient, health=health)
