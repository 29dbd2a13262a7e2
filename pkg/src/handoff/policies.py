"""Scripted reference policies standing in for the trained models.

The approach/transport policy reproduces camera-dependent reach error and
the rising/falling event-signal envelope; the grasp policy reproduces
multi-modal strategy selection (slide vs. direct pick, logistic in the
distance to the table edge), offset-limited competence, failure recovery,
and the success-tail event signal.  Both read ground-truth world state plus
configured noise, never pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import OBJECT_SPECS, GraspStubConfig, SceneConfig, VlaStubConfig
from .core import (
    Action,
    CLOSED_POSE,
    GripCommand,
    INDEX_MCP,
    Instruction,
    JointCommand,
    Observation,
    ObjectKind,
    PlateColor,
    joints_from_synergy,
    synergy_from_joints,
)
from .orchestrator import TaskPhase
from .sim.env import TruthSnapshot

__all__ = [
    "VlaReferencePolicy",
    "GraspReferencePolicy",
    "PowerGraspProxy",
    "power_grasp_action",
    "NullPolicy",
    "slide_probability",
    "attempts_count",
    "classify_grasp_strategy",
    "make_policy_set",
]


def _step_toward(current: np.ndarray, target: np.ndarray, max_step: float) -> np.ndarray:
    """Linear delta toward target, at most max_step long, exact on arrival."""
    diff = target - current
    dist = float(np.linalg.norm(diff))
    if dist <= max_step or dist == 0.0:
        return diff
    return diff * (max_step / dist)


def _action(move: np.ndarray, hand, sigma: float) -> Action:
    delta = np.zeros(6)
    delta[:3] = move
    return Action(delta, hand, sigma)


# ---------------------------------------------------------------------------
# Approach / transport policy
# ---------------------------------------------------------------------------

class VlaReferencePolicy:
    """Moves the hand to a noisy estimate of the commanded object, raises the
    event signal when it believes it has arrived, carries the grasped object
    to the commanded plate, and lowers the signal there."""

    wants_images = False

    def __init__(self, instruction: Instruction, cfg: VlaStubConfig,
                 scene: SceneConfig, rng: np.random.Generator):
        self.instruction = instruction
        self.cfg = cfg
        self.scene = scene
        self.rng = rng
        self._approach_goal: Optional[np.ndarray] = None
        self._transport_goal: Optional[np.ndarray] = None

    def _noise(self) -> np.ndarray:
        if self.cfg.zero_noise:
            return np.zeros(2)
        if self.cfg.camera_mode == "single":
            return np.array([
                self.rng.normal(0.0, self.cfg.single_cross_std),
                self.rng.normal(0.0, self.cfg.single_depth_std),
            ])
        return self.rng.normal(0.0, self.cfg.dual_noise_std, size=2)

    def _clamp_goal(self, goal: np.ndarray) -> np.ndarray:
        goal[0] = np.clip(goal[0], *self.scene.workspace_x)
        goal[1] = np.clip(goal[1], *self.scene.workspace_y)
        goal[2] = np.clip(goal[2], *self.scene.workspace_z)
        return goal

    def act(self, obs: Observation, truth: TruthSnapshot, phase: TaskPhase) -> Action:
        if phase is TaskPhase.GRASPING:
            raise RuntimeError("approach policy queried during grasping")
        pos = np.array([obs.arm.x, obs.arm.y, obs.arm.z])
        dt = self.scene.dt
        if phase in (TaskPhase.IDLE, TaskPhase.APPROACH):
            if self._approach_goal is None:
                target = truth.object_for(self.instruction.object)
                xy = np.array([target.x, target.y]) + self._noise()
                self._approach_goal = self._clamp_goal(
                    np.array([xy[0], xy[1], target.top + self.cfg.hover_height]))
            goal = self._approach_goal
            move = _step_toward(pos, goal, self.cfg.approach_speed * dt)
            sigma = self._rising_sigma(float(np.hypot(goal[0] - pos[0], goal[1] - pos[1])))
            return _action(move, GripCommand(0.0), sigma)

        # Transport and release: head for the commanded plate, then let go.
        if self._transport_goal is None:
            px, py = truth.plate_centers[self.instruction.plate.value]
            xy = np.array([px, py]) + self._noise()
            self._transport_goal = self._clamp_goal(
                np.array([xy[0], xy[1], self.cfg.transport_height]))
        goal = self._transport_goal
        move = _step_toward(pos, goal, self.cfg.transport_speed * dt)
        sigma = self._falling_sigma(float(np.hypot(goal[0] - pos[0], goal[1] - pos[1])))
        grip = GripCommand(0.0) if phase is TaskPhase.RELEASE else GripCommand(1.0)
        return _action(move, grip, sigma)

    def _rising_sigma(self, planar_dist: float) -> float:
        span = self.cfg.rise_distance - self.cfg.sat_distance
        return float(np.clip((self.cfg.rise_distance - planar_dist) / span, 0.0, 1.0))

    def _falling_sigma(self, planar_dist: float) -> float:
        span = self.cfg.rise_distance - self.cfg.sat_distance
        return float(np.clip((planar_dist - self.cfg.sat_distance) / span, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Grasp policy
# ---------------------------------------------------------------------------

def slide_probability(distance_to_edge: float, cfg: GraspStubConfig) -> float:
    """p(slide & pick) = 1 / (1 + exp((d - d0) / k)); 0.5 exactly at d0."""
    return 1.0 / (1.0 + math.exp((distance_to_edge - cfg.mode_d0) / cfg.mode_k))



def _joint_grip(level: float) -> JointCommand:
    """Shaped hand command at a synergy level, in the per-joint convention."""
    return JointCommand(joints_from_synergy(level))


class GraspReferencePolicy:
    """Multi-modal scripted grasping with recovery.

    Per attempt: choose slide-and-pick with the logistic edge-distance
    probability (thin objects only), align laterally at most align_radius
    from the attempt's start pose, run the scripted motion, lift, and check
    attachment.  The event signal is exactly 0 until a lift check passes and
    1 afterwards.  With recovery disabled the policy gives up after one
    attempt and reports finished.
    """

    wants_images = False

    def __init__(self, target: ObjectKind, cfg: GraspStubConfig,
                 scene: SceneConfig, rng: np.random.Generator):
        self.target = target
        self.cfg = cfg
        self.scene = scene
        self.rng = rng
        self.attempt_index = 0
        self.succeeded = False
        self.finished = False
        self.strategies: List[str] = []
        self._mode = "choose"
        self._residual = np.zeros(2)
        self._strategy = "direct"
        self._target_xyz = np.zeros(3)
        self._close_step = 0
        self._push_travel_cap = 0.0
        self._pick_z = 0.0

    # -- helpers ------------------------------------------------------------

    def _pos(self, obs: Observation) -> np.ndarray:
        return np.array([obs.arm.x, obs.arm.y, obs.arm.z])

    def _move(self, obs: Observation, target: np.ndarray, grip: float,
              speed: Optional[float] = None) -> Action:
        speed = speed if speed is not None else self.scene.max_linear_speed
        move = _step_toward(self._pos(obs), target, speed * self.scene.dt)
        return _action(move, _joint_grip(grip), 0.0)

    def _arrived(self, obs: Observation, target: np.ndarray) -> bool:
        return bool(np.linalg.norm(self._pos(obs) - target) < 1e-9)

    # -- attempt planning ---------------------------------------------------

    def _plan_attempt(self, obs: Observation, truth: TruthSnapshot) -> None:
        self.attempt_index += 1
        obj = truth.object_for(self.target)
        spec = OBJECT_SPECS[self.target]
        start = np.array([obs.arm.x, obs.arm.y])
        true_xy = np.array([obj.x, obj.y])
        offset = true_xy - start
        dist = float(np.linalg.norm(offset))
        if dist <= self.cfg.align_radius:
            self._residual = np.zeros(2)
        else:
            reachable = start + offset * (self.cfg.align_radius / dist)
            self._residual = reachable - true_xy

        forced_fail = self.cfg.force_first_attempt_failure and self.attempt_index == 1
        if forced_fail:
            # Deliberate mid-air close well above the object: no capture, so
            # the attempt fails deterministically.
            self._strategy = "direct"
            self._pick_z = obj.top + self.cfg.fail_clearance
            self._mode = "move_pick"
        elif spec.thin and self.rng.random() < slide_probability(
                max(0.0, obj.y), self.cfg):
            self._strategy = "slide"
            self._pick_z = obj.top
            self._push_travel_cap = max(0.0, obj.y) + 0.05
            self._mode = "stance"
        else:
            self._strategy = "direct"
            self._pick_z = obj.top
            self._mode = "move_pick"
        self.strategies.append(self._strategy)

    def _believed_xy(self, truth: TruthSnapshot) -> np.ndarray:
        obj = truth.object_for(self.target)
        return np.array([obj.x, obj.y]) + self._residual

    # -- main ---------------------------------------------------------------

    def act(self, obs: Observation, truth: TruthSnapshot,
            phase: TaskPhase = TaskPhase.GRASPING) -> Action:
        if self.succeeded:
            return Action(np.zeros(6), _joint_grip(self.cfg.close_synergy), 1.0)
        if self.finished:
            return Action(np.zeros(6), _joint_grip(self.cfg.open_synergy), 0.0)

        if self._mode == "choose":
            self._plan_attempt(obs, truth)

        obj = truth.object_for(self.target)
        believed = self._believed_xy(truth)

        if self._mode == "stance":
            target = np.array([believed[0], believed[1] + self.cfg.slide_standoff,
                               max(0.01, obj.top * 0.6)])
            if self._arrived(obs, target):
                self._mode = "grip_for_push"
            else:
                return self._move(obs, target, self.cfg.open_synergy)

        if self._mode == "grip_for_push":
            # Dwell one tick so the fingers reach the pushing posture.
            if synergy_from_joints(obs.hand.joints) >= self.cfg.push_synergy - 0.05:
                self._mode = "push"
            else:
                return _action(np.zeros(3), _joint_grip(self.cfg.push_synergy), 0.0)

        if self._mode == "push":
            depth = OBJECT_SPECS[self.target].footprint[1]
            y_goal = (0.5 - self.cfg.slide_target_overhang) * depth
            remaining = obj.y - y_goal
            if remaining <= 1e-9 or self._push_travel_cap <= 0.0:
                self._mode = "open_after_push"
            else:
                step = min(self.cfg.push_step, remaining, self._push_travel_cap)
                self._push_travel_cap -= step
                return _action(np.array([0.0, -step, 0.0]),
                               _joint_grip(self.cfg.push_synergy), 0.0)

        if self._mode == "open_after_push":
            self._mode = "move_pick"
            return _action(np.zeros(3), _joint_grip(self.cfg.open_synergy), 0.0)

        if self._mode == "move_pick":
            target = np.array([believed[0], believed[1], self._pick_z])
            if self._arrived(obs, target):
                self._mode = "close"
                self._close_step = 0
            else:
                return self._move(obs, target, self.cfg.open_synergy)

        if self._mode == "close":
            self._close_step += 1
            frac = self._close_step / self.cfg.close_ticks
            grip = self.cfg.open_synergy + \
                (self.cfg.close_synergy - self.cfg.open_synergy) * frac
            if self._close_step >= self.cfg.close_ticks:
                self._mode = "lift"
            return _action(np.zeros(3), _joint_grip(grip), 0.0)

        if self._mode == "lift":
            target = np.array([obs.arm.x, obs.arm.y, self.cfg.lift_height])
            if self._arrived(obs, target):
                self._mode = "check"
            else:
                return self._move(obs, target, self.cfg.close_synergy)

        if self._mode == "check":
            if truth.attached == self.target.value:
                self.succeeded = True
                return Action(np.zeros(6), _joint_grip(self.cfg.close_synergy), 1.0)
            if self.cfg.recovery_enabled:
                self._mode = "choose"
            else:
                self.finished = True
            return _action(np.zeros(3), _joint_grip(self.cfg.open_synergy), 0.0)

        # Unreachable fallthrough guard.
        return Action(np.zeros(6), _joint_grip(self.cfg.open_synergy), 0.0)


# ---------------------------------------------------------------------------
# Power grasp proxy (1-DoF gripper stand-in for the baseline)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerGraspScript:
    descend_dz: float = 0.05
    descend_ticks: int = 5
    close_ticks: int = 5
    hold_ticks: int = 2
    ascend_ticks: int = 5

    @property
    def total_ticks(self) -> int:
        return self.descend_ticks + self.close_ticks + self.hold_ticks + self.ascend_ticks


def power_grasp_action(t: int, script: Optional[PowerGraspScript] = None) -> Action:
    """Fixed pre-programmed whole-hand grasp: descend, close, hold, ascend.

    Pure function of ticks-since-trigger, so replays are identical.  The
    event signal turns 1 once the sequence has completed, handing control
    back regardless of whether anything was actually grasped.
    """
    s = script or PowerGraspScript()
    if t < s.descend_ticks:
        return _action(np.array([0.0, 0.0, -s.descend_dz / s.descend_ticks]),
                       GripCommand(0.0), 0.0)
    t -= s.descend_ticks
    if t < s.close_ticks:
        return _action(np.zeros(3), GripCommand((t + 1) / s.close_ticks), 0.0)
    t -= s.close_ticks
    if t < s.hold_ticks:
        return _action(np.zeros(3), GripCommand(1.0), 0.0)
    t -= s.hold_ticks
    if t < s.ascend_ticks:
        return _action(np.array([0.0, 0.0, s.descend_dz / s.ascend_ticks]),
                       GripCommand(1.0), 0.0)
    return _action(np.zeros(3), GripCommand(1.0), 1.0)


class PowerGraspProxy:
    wants_images = False

    def __init__(self, script: Optional[PowerGraspScript] = None):
        self.script = script or PowerGraspScript()
        self._t = 0

    def act(self, obs: Observation, truth: TruthSnapshot,
            phase: TaskPhase = TaskPhase.GRASPING) -> Action:
        action = power_grasp_action(self._t, self.script)
        self._t += 1
        return action


class NullPolicy:
    """Emits nothing: zero motion, open hand, sigma 0."""

    wants_images = False

    def act(self, obs: Observation, truth: TruthSnapshot,
            phase: TaskPhase = TaskPhase.GRASPING) -> Action:
        return Action(np.zeros(6), GripCommand(0.0), 0.0)


# ---------------------------------------------------------------------------
# Trace analysis
# ---------------------------------------------------------------------------

def attempts_count(joint_history: Sequence[Sequence[float]],
                   threshold_fraction: float = 0.75) -> int:
    """Number of closing excursions of the index base joint.

    An excursion is a maximal run of ticks with the index MCP angle above
    threshold_fraction of its closed-pose angle; this matches counting the
    peaks of that joint's trace.
    """
    threshold = threshold_fraction * CLOSED_POSE[INDEX_MCP]
    count = 0
    above = False
    for joints in joint_history:
        now = joints[INDEX_MCP] > threshold
        if now and not above:
            count += 1
        above = now
    return count


def classify_grasp_strategy(arm_history: Sequence[Sequence[float]],
                            joint_history: Sequence[Sequence[float]],
                            displacement_threshold: float = 0.02,
                            close_level: float = 0.55) -> str:
    """Classify a grasp trace by hand motion, not policy self-report.

    A planar hand excursion of at least displacement_threshold before the
    first close (synergy crossing close_level) marks a slide-and-pick.
    """
    start = None
    max_disp = 0.0
    for arm, joints in zip(arm_history, joint_history):
        if start is None:
            start = (arm[0], arm[1])
        if synergy_from_joints(np.asarray(joints)) >= close_level:
            break
        max_disp = max(max_disp, math.hypot(arm[0] - start[0], arm[1] - start[1]))
    return "slide_and_pick" if max_disp >= displacement_threshold else "direct_pick"


# ---------------------------------------------------------------------------
# Grasp-only trials (the grasp policy exercised without the full task FSM)
# ---------------------------------------------------------------------------

@dataclass
class GraspTrialResult:
    success: bool
    attempts: int
    ticks: int
    sigma_history: List[float]
    arm_history: List[Tuple[float, float, float]]
    joint_history: List[np.ndarray]
    strategy: str

    @property
    def first_attempt_sigma_zero(self) -> bool:
        """True when sigma stayed 0 until after the final successful lift."""
        nonzero = [i for i, s in enumerate(self.sigma_history) if s > 0]
        if not nonzero:
            return not self.success
        first = nonzero[0]
        return all(s == 0.0 for s in self.sigma_history[:first])


def run_grasp_trial(
    env,
    policy: GraspReferencePolicy,
    target: ObjectKind,
    seed: int,
    position: Tuple[float, float],
    start_offset: Tuple[float, float] = (0.0, 0.0),
    start_clearance: float = 0.05,
    max_ticks: int = 250,
    tail_ticks: int = 0,
    recorder=None,
) -> GraspTrialResult:
    """Run the grasp policy alone: the hand starts start_clearance above the
    object (displaced by start_offset) and the trial ends on success plus an
    optional tail, on the policy giving up, or on the tick budget."""
    spec = OBJECT_SPECS[target]
    hand_start = (position[0] + start_offset[0], position[1] + start_offset[1],
                  spec.height + start_clearance)
    env.reset(seed, kinds=[target], positions={target: position}, hand_start=hand_start)
    instruction = Instruction(raw_text=f"pick the {target.value}", object=target,
                              plate=PlateColor.YELLOW)
    sigma_history: List[float] = []
    arm_history: List[Tuple[float, float, float]] = []
    joint_history: List[np.ndarray] = []
    tail_left = None
    t = 0
    for t in range(max_ticks):
        obs = env.observe(instruction, t, include_images=recorder is not None)
        truth = env.truth()
        action = policy.act(obs, truth, TaskPhase.GRASPING)
        env.step(action)
        sigma_history.append(action.sigma)
        arm_history.append((obs.arm.x, obs.arm.y, obs.arm.z))
        joint_history.append(np.array(obs.hand.joints, copy=True))
        if recorder is not None:
            recorder(t, obs, truth, action)
        if policy.succeeded:
            if tail_left is None:
                tail_left = tail_ticks
            if tail_left <= 0:
                break
            tail_left -= 1
        if policy.finished:
            break
    return GraspTrialResult(
        success=policy.succeeded,
        attempts=policy.attempt_index,
        ticks=t + 1,
        sigma_history=sigma_history,
        arm_history=arm_history,
        joint_history=joint_history,
        strategy=classify_grasp_strategy(arm_history, joint_history),
    )


# ---------------------------------------------------------------------------
# Policy set assembly
# ---------------------------------------------------------------------------

def make_policy_set(
    instruction: Instruction,
    scene: SceneConfig,
    seed: int,
    vla_cfg: Optional[VlaStubConfig] = None,
    grasp_cfg: Optional[GraspStubConfig] = None,
    baseline: bool = False,
):
    """Fresh per-episode policy instances keyed by policy id.

    Policy randomness is derived from the episode seed through independent
    spawned streams, so in-process and remote execution can reproduce the
    same behavior from the seed alone.
    """
    from .orchestrator import POWER_GRASP_POLICY_ID, VLA_POLICY_ID

    vla_cfg = vla_cfg or VlaStubConfig()
    grasp_cfg = grasp_cfg or GraspStubConfig()
    vla_seq, grasp_seq = np.random.SeedSequence(seed).spawn(2)
    policies = {
        VLA_POLICY_ID: VlaReferencePolicy(
            instruction, vla_cfg, scene, np.random.default_rng(vla_seq)),
        POWER_GRASP_POLICY_ID: PowerGraspProxy(),
    }
    if not baseline:
        grasp_rng = np.random.default_rng(grasp_seq)
        for kind in ObjectKind:
            policies[f"grasp:{kind.value}"] = GraspReferencePolicy(
                kind, grasp_cfg, scene, grasp_rng)
    return policies
