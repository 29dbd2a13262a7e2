"""Switching framework: one active policy per tick, handoffs on debounced
event-signal edges, per-object grasp policy lookup, phase timeouts, scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .core import (
    Action,
    Edge,
    EdgeDetector,
    GripCommand,
    Instruction,
    JointCommand,
    Observation,
    ObjectKind,
)
from .sim.world import RestRegion, WorldOutcome

__all__ = [
    "TaskPhase",
    "PhaseMachine",
    "PolicyTable",
    "LookupMissError",
    "SafetyStopError",
    "ScoreReason",
    "Score",
    "score_episode",
    "TickRecord",
    "EpisodeResult",
    "run_episode",
    "VLA_POLICY_ID",
    "POWER_GRASP_POLICY_ID",
    "LEGAL_PHASE_ORDER",
    "phase_sequence_is_legal",
]

VLA_POLICY_ID = "vla"
POWER_GRASP_POLICY_ID = "power_grasp"

LEGAL_PHASE_ORDER = ("idle", "approach", "grasping", "transport", "release", "done")


class TaskPhase(Enum):
    IDLE = "idle"
    APPROACH = "approach"
    GRASPING = "grasping"
    TRANSPORT = "transport"
    RELEASE = "release"
    DONE = "done"
    FAILURE = "failure"


class MachineMode(Enum):
    HYBRID = "hybrid"
    VLA_ONLY_BASELINE = "baseline"


class LookupMissError(KeyError):
    """The policy table has no grasp policy for the commanded object."""


class SafetyStopError(RuntimeError):
    """Raised by a remote policy after too many consecutive deadline misses."""


@dataclass(frozen=True)
class PolicyTable:
    """Lookup from object kind to the grasp policy that owns it."""

    entries: Mapping[ObjectKind, str]

    def lookup(self, kind: ObjectKind) -> str:
        try:
            return self.entries[kind]
        except KeyError:
            raise LookupMissError(f"no grasp policy for {kind.value}") from None

    @classmethod
    def default(cls) -> "PolicyTable":
        return cls({kind: f"grasp:{kind.value}" for kind in ObjectKind})


@dataclass
class PhaseTimeouts:
    approach: int = 300
    grasping: int = 300
    transport: int = 300
    release: int = 25

    def budget(self, phase: TaskPhase) -> int:
        return {
            TaskPhase.APPROACH: self.approach,
            TaskPhase.GRASPING: self.grasping,
            TaskPhase.TRANSPORT: self.transport,
            TaskPhase.RELEASE: self.release,
        }.get(phase, 1 << 30)


@dataclass
class TickResult:
    next_phase: TaskPhase
    command: Action
    switch: Optional[str] = None


@dataclass
class PhaseMachine:
    """Drives the task FSM from the active policy's event signal.

    Approach ends on a rising edge of the approach policy's sigma (handing
    off to the grasp policy named by the lookup table); Grasping ends on a
    rising edge of the grasp sigma (handing back); Transport ends on a
    falling edge of the approach sigma; Release holds the hand open for a
    fixed number of ticks and completes the episode.  Each phase has a tick
    budget that trips Failure("timeout:<phase>").
    """

    timeouts: PhaseTimeouts = field(default_factory=PhaseTimeouts)
    mode: MachineMode = MachineMode.HYBRID
    release_hold_ticks: int = 10
    vla_edge: EdgeDetector = field(default_factory=EdgeDetector)
    grasp_edge: EdgeDetector = field(default_factory=EdgeDetector)
    phase: TaskPhase = TaskPhase.IDLE
    phase_entry_tick: int = 0
    failure_reason: Optional[str] = None
    grasp_policy_id: Optional[str] = None
    sigma_vla: float = 0.0
    sigma_grasp: float = 0.0
    transitions: List[Tuple[int, str]] = field(
        default_factory=lambda: [(0, TaskPhase.IDLE.value)])

    def active_policy(self) -> str:
        if self.phase is TaskPhase.GRASPING:
            assert self.grasp_policy_id is not None
            return self.grasp_policy_id
        return VLA_POLICY_ID

    def fail(self, reason: str, tick: int) -> None:
        self.failure_reason = reason
        self._transition(TaskPhase.FAILURE, tick)

    def _transition(self, phase: TaskPhase, tick: int) -> None:
        self.phase = phase
        self.phase_entry_tick = tick
        self.transitions.append((tick, phase.value))

    def tick(self, table: PolicyTable, obs: Observation, action: Action) -> TickResult:
        """Consume the active policy's output for this tick.

        Returns the next phase, the command to apply to the robot (the
        policy's action unless the machine overrides it at a handoff or
        during release), and the id of a newly selected grasp policy when a
        handoff to Grasping happens.
        """
        if self.phase in (TaskPhase.DONE, TaskPhase.FAILURE):
            raise RuntimeError("tick on a terminated machine")

        if self.phase is TaskPhase.IDLE:
            self._transition(TaskPhase.APPROACH, obs.tick)

        switch: Optional[str] = None
        command = action
        phase = self.phase

        if phase is TaskPhase.APPROACH:
            self.sigma_vla = action.sigma
            if self.vla_edge.update(action.sigma) is Edge.RISING:
                if self.mode is MachineMode.VLA_ONLY_BASELINE:
                    switch = POWER_GRASP_POLICY_ID
                else:
                    switch = table.lookup(obs.instruction.object)
                self.grasp_policy_id = switch
                self._transition(TaskPhase.GRASPING, obs.tick)
                # Freeze the arm at the handoff; the grasp policy moves it
                # from this baseline on the next tick.
                command = Action(np.zeros(6), GripCommand(0.0), action.sigma)
        elif phase is TaskPhase.GRASPING:
            self.sigma_grasp = action.sigma
            if self.grasp_edge.update(action.sigma) is Edge.RISING:
                self._transition(TaskPhase.TRANSPORT, obs.tick)
                command = Action(np.zeros(6), JointCommand(np.array(obs.hand.joints, copy=True)),
                                 action.sigma)
        elif phase is TaskPhase.TRANSPORT:
            self.sigma_vla = action.sigma
            if self.vla_edge.update(action.sigma) is Edge.FALLING:
                self._transition(TaskPhase.RELEASE, obs.tick)
                command = Action(action.arm_delta, GripCommand(0.0), action.sigma)
        elif phase is TaskPhase.RELEASE:
            self.sigma_vla = action.sigma
            command = Action(action.arm_delta, GripCommand(0.0), action.sigma)
            if obs.tick - self.phase_entry_tick + 1 >= self.release_hold_ticks:
                self._transition(TaskPhase.DONE, obs.tick)

        if self.phase not in (TaskPhase.DONE, TaskPhase.FAILURE) and \
                self.phase is phase and \
                obs.tick - self.phase_entry_tick + 1 > self.timeouts.budget(phase):
            self.fail(f"timeout:{phase.value}", obs.tick)

        return TickResult(next_phase=self.phase, command=command, switch=switch)


def phase_sequence_is_legal(phases: List[str]) -> bool:
    """True when the deduplicated phase sequence is a prefix of the legal
    order, optionally ending in failure."""
    dedup: List[str] = []
    for p in phases:
        if not dedup or dedup[-1] != p:
            dedup.append(p)
    if dedup and dedup[-1] == TaskPhase.FAILURE.value:
        dedup = dedup[:-1]
        if not dedup:
            return True
    if len(dedup) != len(set(dedup)):
        return False  # revisited a phase
    return tuple(dedup) == LEGAL_PHASE_ORDER[:len(dedup)]


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

class ScoreReason(Enum):
    WRONG_OBJECT = "approached_wrong_object"
    NEVER_ATTACHED = "never_attached"
    WRONG_PLATE = "delivered_to_wrong_plate"
    MISSED_PLATE = "missed_commanded_plate"
    SUCCESS = "success"


SCORE_VALUES = {
    ScoreReason.WRONG_OBJECT: 0.0,
    ScoreReason.NEVER_ATTACHED: 0.25,
    ScoreReason.WRONG_PLATE: 0.50,
    ScoreReason.MISSED_PLATE: 0.75,
    ScoreReason.SUCCESS: 1.0,
}


@dataclass(frozen=True)
class Score:
    value: float
    reason: ScoreReason


def score_episode(ground_truth: WorldOutcome, instruction: Instruction) -> Score:
    """Five-level rubric over the terminal world state.

    0.00 wrong object approached; 0.25 right object but never attached;
    0.50 delivered onto the other plate; 0.75 attached but the object does
    not rest on the commanded plate; 1.00 at rest on the commanded plate.
    """
    target = instruction.object.value
    if ground_truth.nearest_at_grasp_entry is not None and \
            ground_truth.nearest_at_grasp_entry != target:
        reason = ScoreReason.WRONG_OBJECT
    elif not ground_truth.attachment_ever:
        reason = ScoreReason.NEVER_ATTACHED
    else:
        commanded = RestRegion.PLATE_YELLOW if instruction.plate.value == "yellow" \
            else RestRegion.PLATE_PURPLE
        other = RestRegion.PLATE_PURPLE if commanded is RestRegion.PLATE_YELLOW \
            else RestRegion.PLATE_YELLOW
        if ground_truth.target_rest is commanded:
            reason = ScoreReason.SUCCESS
        elif ground_truth.target_rest is other:
            reason = ScoreReason.WRONG_PLATE
        else:
            reason = ScoreReason.MISSED_PLATE
    return Score(value=SCORE_VALUES[reason], reason=reason)


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------

@dataclass
class TickRecord:
    tick: int
    phase: str
    active_policy: str
    arm: Tuple[float, ...]
    joints: Tuple[float, ...]
    sigma_vla: float
    sigma_grasp: float

    def to_json(self) -> str:
        return json.dumps({
            "tick": self.tick,
            "phase": self.phase,
            "active_policy": self.active_policy,
            "arm": [repr(v) for v in self.arm],
            "joints": [repr(v) for v in self.joints],
            "sigma_vla": repr(self.sigma_vla),
            "sigma_grasp": repr(self.sigma_grasp),
        }, separators=(",", ":"))


@dataclass
class EpisodeResult:
    trace: List[TickRecord]
    score: Score
    phase_log: List[Tuple[int, str]]
    outcome: WorldOutcome
    instruction: Instruction
    seed: int
    final_phase: TaskPhase
    failure_reason: Optional[str]

    def trace_jsonl(self) -> str:
        return "\n".join(r.to_json() for r in self.trace) + "\n"

    def meta_json(self) -> str:
        return json.dumps({
            "instruction": self.instruction.raw_text,
            "object": self.instruction.object.value,
            "plate": self.instruction.plate.value,
            "seed": self.seed,
            "score": self.score.value,
            "reason": self.score.reason.value,
            "final_phase": self.final_phase.value,
            "failure_reason": self.failure_reason,
        }, indent=2, sort_keys=True)

    def write(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(self.trace_jsonl())
        (out / "meta.json").write_text(self.meta_json())


def run_episode(
    env,
    policies: Mapping[str, object],
    machine: PhaseMachine,
    instruction: Instruction,
    seed: int,
    table: Optional[PolicyTable] = None,
    max_ticks: int = 1200,
    recorder: Optional[Callable] = None,
    stop_after_grasp_entry: bool = False,
    reset_env: bool = True,
    reset_kwargs: Optional[Dict] = None,
) -> EpisodeResult:
    """Run one pick-and-place episode to termination.

    Exactly one policy is queried per tick (the machine's active policy);
    the recorder, when given, is called once per tick with
    (tick, obs, truth, phase, command) after the world step.
    """
    table = table or PolicyTable.default()
    if reset_env:
        env.reset(seed, **(reset_kwargs or {}))
    trace: List[TickRecord] = []
    grasp_entry_nearest: Optional[str] = None

    for t in range(max_ticks):
        policy_id = machine.active_policy()
        policy = policies[policy_id]
        wants_images = bool(getattr(policy, "wants_images", False)) or recorder is not None
        obs = env.observe(instruction, t, include_images=wants_images)
        truth = env.truth()
        try:
            action = policy.act(obs, truth, machine.phase)
        except SafetyStopError:
            machine.fail("safety_stop", t)
            break
        prev_phase = machine.phase if machine.phase is not TaskPhase.IDLE else TaskPhase.APPROACH
        result = machine.tick(table, obs, action)
        if result.switch is not None:
            grasp_entry_nearest = env.nearest_object_name()
        env.step(result.command)
        trace.append(TickRecord(
            tick=t,
            phase=prev_phase.value,
            active_policy=policy_id,
            arm=tuple(float(v) for v in obs.arm.as_array()),
            joints=tuple(float(v) for v in obs.hand.joints),
            sigma_vla=machine.sigma_vla,
            sigma_grasp=machine.sigma_grasp,
        ))
        if recorder is not None:
            recorder(t, obs, truth, prev_phase, result.command)
        if machine.phase in (TaskPhase.DONE, TaskPhase.FAILURE):
            break
        if stop_after_grasp_entry and machine.phase is TaskPhase.GRASPING:
            break
    else:
        if machine.phase not in (TaskPhase.DONE, TaskPhase.FAILURE):
            machine.fail("timeout:global", max_ticks - 1)

    world_outcome = env.outcome(instruction.object, grasp_entry_nearest)
    score = score_episode(world_outcome, instruction)
    return EpisodeResult(
        trace=trace,
        score=score,
        phase_log=list(machine.transitions),
        outcome=world_outcome,
        instruction=instruction,
        seed=seed,
        final_phase=machine.phase,
        failure_reason=machine.failure_reason,
    )
