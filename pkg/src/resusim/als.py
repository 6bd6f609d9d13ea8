"""Advanced life support cardiac-arrest algorithm as a pure state machine.

The machine only ever sees what the team leader can see (monitor, reported
pulse, the leader's own shock) and answers with directives; the engine and
the agents turn those into speech and actions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

from .domain import Role, RhythmState, Shockability, classify_shockability

CYCLE_SECONDS = 120
COMPRESSIONS_PER_BLOCK = 30
VENTILATIONS_PER_BLOCK = 2


class ProtocolError(RuntimeError):
    """Transition asked of a terminated machine, or out-of-order CPR counts."""


class Phase(str, enum.Enum):
    ASSESS_ARRIVAL = "AssessArrival"
    CPR_CYCLE = "CprCycle"
    RHYTHM_CHECK = "RhythmCheck"
    CHARGING = "Charging"
    SHOCK_DELIVERY = "ShockDelivery"
    POST_SHOCK_PULSE_CHECK = "PostShockPulseCheck"
    # Not entered: drugs are given alongside CPR, tracked through next_drug.
    DRUG_ADMINISTRATION = "DrugAdministration"
    TERMINATED = "Terminated"


class Drug(str, enum.Enum):
    ADRENALINE = "Adrenaline"
    AMIODARONE = "Amiodarone"


class Outcome(str, enum.Enum):
    ROSC = "ROSC"
    FUTILE = "Futile"


class DirectiveKind(str, enum.Enum):
    START_COMPRESSIONS = "StartCompressions"
    GIVE_VENTILATIONS = "GiveVentilations"
    ATTACH_PADS = "AttachPads"
    INSTALL_IV = "InstallIv"
    INTUBATE = "Intubate"
    CHARGE_SHOCK = "ChargeShock"
    STAND_CLEAR = "StandClear"
    CHECK_PULSE = "CheckPulse"
    PREPARE_DRUG = "PrepareDrug"
    INJECT_DRUG = "InjectDrug"
    ROTATE_COMPRESSOR = "RotateCompressor"
    STOP_RESUSCITATION = "StopResuscitation"


DIRECTIVE_ACTIONS = {
    DirectiveKind.START_COMPRESSIONS: "chest_compressions_30",
    DirectiveKind.GIVE_VENTILATIONS: "ventilate_x2",
    DirectiveKind.ATTACH_PADS: "attach_defib_pads",
    DirectiveKind.INSTALL_IV: "install_iv",
    DirectiveKind.INTUBATE: "intubate",
    DirectiveKind.CHARGE_SHOCK: "charge_and_shock",
    DirectiveKind.CHECK_PULSE: "check_pulse",
    DirectiveKind.PREPARE_DRUG: "prepare_drug",
    DirectiveKind.INJECT_DRUG: "inject_drug",
}
COORDINATION_SIGNALS = frozenset(
    {DirectiveKind.STAND_CLEAR, DirectiveKind.STOP_RESUSCITATION, DirectiveKind.ROTATE_COMPRESSOR}
)

BROADCAST = "Broadcast"
# Resolved by the leader to whoever currently holds compression duty.
COMPRESSOR = "Compressor"


@dataclass(frozen=True)
class Directive:
    kind: DirectiveKind
    target_role: object  # Role, BROADCAST or COMPRESSOR
    drug: Optional[Drug] = None

    @property
    def action_id(self) -> Optional[str]:
        return DIRECTIVE_ACTIONS.get(self.kind)


@dataclass(frozen=True)
class AlsConfig:
    futility_limit: int = 1800
    # Adrenaline on the unshockable branch at check 1, 1 + n, 1 + 2n, ...
    unshockable_adrenaline_every: int = 2


@dataclass(frozen=True)
class Observation:
    """What the leader can see or has been told at this moment."""

    rhythm: Optional[RhythmState] = None  # None while no pads are on
    pulse: Optional[bool] = None  # result of the latest post-shock pulse check
    breathing: bool = False
    shock_delivered: bool = False


@dataclass(frozen=True)
class AlsState:
    phase: Phase = Phase.ASSESS_ARRIVAL
    cycle_clock: int = 0
    shock_count: int = 0
    compressions_in_block: int = 0
    ventilations_in_block: int = 0
    next_drug: Optional[Drug] = None
    outcome: Optional[Outcome] = None
    shocks_delivered: int = 0
    unshockable_checks: int = 0

    def __post_init__(self):
        if not 0 <= self.cycle_clock <= CYCLE_SECONDS:
            raise ValueError(f"cycle_clock {self.cycle_clock} outside [0, {CYCLE_SECONDS}]")
        if (self.outcome is not None) != (self.phase is Phase.TERMINATED):
            raise ValueError("outcome is set iff the machine is terminated")
        if not 0 <= self.compressions_in_block <= COMPRESSIONS_PER_BLOCK:
            raise ValueError("compressions_in_block out of range")
        if not 0 <= self.ventilations_in_block <= VENTILATIONS_PER_BLOCK:
            raise ValueError("ventilations_in_block out of range")

    @property
    def cpr_running(self) -> bool:
        return self.phase is Phase.CPR_CYCLE


def drug_for_shock(n: int) -> Optional[Drug]:
    """Drug due after the n-th pulseless shock."""
    if n < 1:
        raise ValueError("shock count must be >= 1")
    if n < 3:
        return None
    return Drug.ADRENALINE if n % 2 == 1 else Drug.AMIODARONE


def _drug_directives(drug: Drug) -> list:
    return [
        Directive(DirectiveKind.PREPARE_DRUG, Role.PARAMEDIC3, drug),
        Directive(DirectiveKind.INJECT_DRUG, Role.PARAMEDIC3, drug),
    ]


def _terminate(state: AlsState, outcome: Outcome) -> tuple:
    done = replace(state, phase=Phase.TERMINATED, outcome=outcome, compressions_in_block=0, ventilations_in_block=0)
    return [Directive(DirectiveKind.STOP_RESUSCITATION, BROADCAST)], done


def advance_clock(state: AlsState, seconds: int = 1) -> AlsState:
    """Count CPR time; reaching a full cycle forces a rhythm check."""
    if state.phase is not Phase.CPR_CYCLE:
        return state
    if seconds < 0:
        raise ValueError("seconds must be >= 0")
    clock = min(CYCLE_SECONDS, state.cycle_clock + seconds)
    if clock == CYCLE_SECONDS:
        return replace(state, cycle_clock=clock, phase=Phase.RHYTHM_CHECK)
    # Called every CPR second; a plain copy skips re-validating a bounded field.
    new = object.__new__(AlsState)
    new.__dict__.update(state.__dict__)
    new.__dict__["cycle_clock"] = clock
    return new


def next_directives(
    state: AlsState, observation: Observation, clock: int, cfg: AlsConfig = AlsConfig()
) -> tuple:
    """One pure transition. Returns (directives, new_state)."""
    phase = state.phase
    if phase is Phase.TERMINATED:
        raise ProtocolError(f"transition requested at tick {clock} on a terminated run")

    if phase is Phase.ASSESS_ARRIVAL:
        return [
            Directive(DirectiveKind.START_COMPRESSIONS, COMPRESSOR),
            Directive(DirectiveKind.ATTACH_PADS, Role.PARAMEDIC3),
            Directive(DirectiveKind.INTUBATE, Role.PARAMEDIC2),
            Directive(DirectiveKind.INSTALL_IV, Role.PARAMEDIC3),
        ], replace(state, phase=Phase.CPR_CYCLE, cycle_clock=0)

    if phase is Phase.RHYTHM_CHECK:
        reset = replace(state, cycle_clock=0, compressions_in_block=0, ventilations_in_block=0)
        if observation.rhythm is None:
            # No monitor yet: keep compressing and chase the pads.
            return [Directive(DirectiveKind.ATTACH_PADS, Role.PARAMEDIC3)], replace(
                state, cycle_clock=0, phase=Phase.CPR_CYCLE
            )
        kind = classify_shockability(observation.rhythm)
        if kind is Shockability.PERFUSING:
            return _terminate(reset, Outcome.ROSC)
        if kind is Shockability.SHOCKABLE:
            return [
                Directive(DirectiveKind.CHARGE_SHOCK, Role.PHYSICIAN),
                Directive(DirectiveKind.STAND_CLEAR, BROADCAST),
            ], replace(reset, phase=Phase.CHARGING)
        checks = state.unshockable_checks + 1
        out = [Directive(DirectiveKind.START_COMPRESSIONS, COMPRESSOR)]
        drug = state.next_drug
        if (checks - 1) % cfg.unshockable_adrenaline_every == 0:
            drug = Drug.ADRENALINE
            out += _drug_directives(drug)
        return out, replace(reset, phase=Phase.CPR_CYCLE, unshockable_checks=checks, next_drug=drug)

    if phase is Phase.CHARGING:
        if observation.shock_delivered:
            return [], replace(state, phase=Phase.SHOCK_DELIVERY, shocks_delivered=state.shocks_delivered + 1)
        return [], state

    if phase is Phase.SHOCK_DELIVERY:
        return [Directive(DirectiveKind.CHECK_PULSE, COMPRESSOR)], replace(state, phase=Phase.POST_SHOCK_PULSE_CHECK)

    if phase is Phase.POST_SHOCK_PULSE_CHECK:
        if observation.pulse is None:
            return [], state
        rhythm = observation.rhythm
        if observation.pulse and rhythm is not None and classify_shockability(rhythm) is Shockability.PERFUSING:
            return _terminate(state, Outcome.ROSC)
        count = state.shock_count + 1
        drug = drug_for_shock(count)
        out = [Directive(DirectiveKind.START_COMPRESSIONS, COMPRESSOR)]
        if drug is not None:
            out += _drug_directives(drug)
        return out, replace(
            state, phase=Phase.CPR_CYCLE, shock_count=count, cycle_clock=0,
            next_drug=drug if drug is not None else state.next_drug,
        )

    # CprCycle: the 30:2 routine runs on its own; nothing to direct.
    return [], state


def advance_compression_cycle(state: AlsState, completed: str) -> tuple:
    """Book a finished compression block or ventilation.

    ``completed`` is "Compression" (a whole block of 30) or "Ventilation"
    (one breath). Returns (state, next directive kind or None).
    """
    if state.phase is not Phase.CPR_CYCLE:
        raise ProtocolError(f"CPR count outside CprCycle (phase {state.phase.value})")
    if completed == "Compression":
        if state.compressions_in_block >= COMPRESSIONS_PER_BLOCK:
            raise ProtocolError("compressions reported while ventilations are due")
        n = state.compressions_in_block + 1
        nxt = DirectiveKind.GIVE_VENTILATIONS if n == COMPRESSIONS_PER_BLOCK else DirectiveKind.START_COMPRESSIONS
        return replace(state, compressions_in_block=n), nxt
    if completed == "Ventilation":
        if state.compressions_in_block < COMPRESSIONS_PER_BLOCK:
            raise ProtocolError("ventilation reported before 30 compressions")
        v = state.ventilations_in_block + 1
        if v == VENTILATIONS_PER_BLOCK:
            return replace(state, compressions_in_block=0, ventilations_in_block=0), DirectiveKind.START_COMPRESSIONS
        return replace(state, ventilations_in_block=v), DirectiveKind.GIVE_VENTILATIONS
    raise ValueError(f"unknown CPR event {completed!r}")


def complete_compression_block(state: AlsState) -> AlsState:
    """Book the rest of the current block of 30 in one step.

    Same result as calling advance_compression_cycle once per remaining
    compression.
    """
    if state.phase is not Phase.CPR_CYCLE:
        raise ProtocolError(f"CPR count outside CprCycle (phase {state.phase.value})")
    if state.compressions_in_block >= COMPRESSIONS_PER_BLOCK:
        raise ProtocolError("compressions reported while ventilations are due")
    return replace(state, compressions_in_block=COMPRESSIONS_PER_BLOCK)


def complete_ventilation_pair(state: AlsState) -> AlsState:
    if state.phase is not Phase.CPR_CYCLE:
        raise ProtocolError(f"CPR count outside CprCycle (phase {state.phase.value})")
    if state.compressions_in_block < COMPRESSIONS_PER_BLOCK:
        raise ProtocolError("ventilation reported before 30 compressions")
    return replace(state, compressions_in_block=0, ventilations_in_block=0)


def check_termination(
    state: AlsState, observation: Observation, elapsed: int, futility_limit: int
) -> Optional[Outcome]:
    rhythm = observation.rhythm
    if rhythm is not None and observation.breathing and classify_shockability(rhythm) is Shockability.PERFUSING:
        return Outcome.ROSC
    if elapsed >= futility_limit:
        return Outcome.FUTILE
    return None
