"""Deterministic 2.5-D pick-and-place world.

Kinematics only: the hand integrates clamped pose deltas, joints chase their
targets, and contact is resolved with three rules:

  * a closing hand near an object rolls one attachment attempt,
  * a partially closed hand in planar contact drags the object with it
    (sticking slide),
  * an unattached object overhanging the table edge beyond the fall
    threshold drops to the floor.

All randomness flows through the world's seeded generator, so a fixed seed
and command stream reproduce the trajectory bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import OBJECT_SPECS, GraspModelConfig, ObjectSpec, SceneConfig
from ..core import (
    Action,
    ArmPose,
    GripCommand,
    JointCommand,
    ObjectKind,
    PlateColor,
    joints_from_synergy,
    synergy_from_joints,
)

__all__ = [
    "GraspStrategy",
    "ObjectState",
    "WorldState",
    "RestRegion",
    "WorldOutcome",
    "GraspAttempt",
    "grasp_probability",
    "attempt_grasp",
    "step_world",
    "outcome",
    "spawn_world",
]


class GraspStrategy(Enum):
    DIRECT_PICK = "direct_pick"
    SLIDE_AND_PICK = "slide_and_pick"
    POWER_GRASP = "power_grasp"


class RestRegion(Enum):
    PLATE_YELLOW = "plate_yellow"
    PLATE_PURPLE = "plate_purple"
    TABLE = "table"
    FLOOR = "floor"
    HELD = "held"


@dataclass
class ObjectState:
    name: str
    kind: ObjectKind
    x: float
    y: float
    z: float                      # center height
    fallen: bool = False

    @property
    def spec(self) -> ObjectSpec:
        return OBJECT_SPECS[self.kind]

    @property
    def top(self) -> float:
        return self.z + self.spec.height / 2.0

    @property
    def rest_z(self) -> float:
        return self.spec.height / 2.0

    def overhang_fraction(self) -> float:
        """Fraction of the footprint depth hanging past the table edge (y=0)."""
        depth = self.spec.footprint[1]
        near_edge = self.y - depth / 2.0
        return float(min(1.0, max(0.0, -near_edge / depth)))

    def distance_to_edge(self) -> float:
        return max(0.0, self.y)


@dataclass
class WorldState:
    scene: SceneConfig
    objects: List[ObjectState]
    hand: ArmPose
    joints: np.ndarray
    rng: np.random.Generator
    attached: Optional[str] = None
    attach_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    attachment_ever: bool = False
    last_attempt: Optional["GraspAttempt"] = None
    _prev_synergy: float = 0.0

    @property
    def synergy(self) -> float:
        return synergy_from_joints(self.joints)

    def object_by_name(self, name: str) -> ObjectState:
        for obj in self.objects:
            if obj.name == name:
                return obj
        raise KeyError(name)

    def nearest_object(self) -> Optional[ObjectState]:
        live = [o for o in self.objects if not o.fallen]
        if not live:
            return None
        return min(live, key=lambda o: math.hypot(o.x - self.hand.x, o.y - self.hand.y))


@dataclass(frozen=True)
class GraspAttempt:
    attempted: bool
    attached: bool
    strategy: GraspStrategy
    object_name: Optional[str]
    probability: float
    planar_offset: float


@dataclass(frozen=True)
class WorldOutcome:
    nearest_at_grasp_entry: Optional[str]
    attachment_ever: bool
    target_rest: RestRegion
    target_name: str


def spawn_world(
    scene: SceneConfig,
    seed: int,
    kinds: Optional[List[ObjectKind]] = None,
    positions: Optional[Dict[ObjectKind, Tuple[float, float]]] = None,
    hand_start: Optional[Tuple[float, float, float]] = None,
) -> WorldState:
    """Build a world with objects placed at `positions` or sampled uniformly
    in the test area with a minimum pairwise separation."""
    rng = np.random.default_rng(seed)
    kinds = kinds if kinds is not None else [ObjectKind.PEPPER, ObjectKind.TAPE, ObjectKind.PAPER]
    objects: List[ObjectState] = []
    placed: List[Tuple[float, float]] = []
    for kind in kinds:
        if positions is not None and kind in positions:
            x, y = positions[kind]
        else:
            for _ in range(200):
                x = rng.uniform(*scene.test_area_x)
                y = rng.uniform(*scene.test_area_y)
                if all(math.hypot(x - px, y - py) >= scene.min_object_separation
                       for px, py in placed):
                    break
            else:
                raise RuntimeError("could not place objects with required separation")
        placed.append((x, y))
        spec = OBJECT_SPECS[kind]
        objects.append(ObjectState(name=kind.value, kind=kind, x=x, y=y,
                                   z=spec.height / 2.0))
    hx, hy, hz = hand_start if hand_start is not None else scene.hand_home
    return WorldState(
        scene=scene,
        objects=objects,
        hand=ArmPose(hx, hy, hz),
        joints=np.zeros(13),
        rng=rng,
    )


# ---------------------------------------------------------------------------
# Grasp model
# ---------------------------------------------------------------------------

def grasp_probability(
    model: GraspModelConfig,
    kind: ObjectKind,
    strategy: GraspStrategy,
    overhang: float,
    planar_offset: float,
    height_offset: float,
) -> float:
    """Attachment probability before the Bernoulli draw.

    Monotone non-increasing in planar_offset for fixed remaining arguments.
    """
    if strategy is GraspStrategy.SLIDE_AND_PICK:
        base = model.q_slide_supported if overhang >= model.overhang_threshold \
            else model.q_slide_unsupported
    elif strategy is GraspStrategy.POWER_GRASP:
        base = model.q_power[kind]
    else:
        base = model.q_direct
        spec = OBJECT_SPECS[kind]
        if abs(height_offset) > spec.direct_pick_height_tol:
            base *= model.thin_height_penalty
    q = base * math.exp(-((planar_offset / model.lambda_offset) ** 2))
    return float(min(1.0, max(0.0, q)))


def attempt_grasp(world: WorldState, strategy: GraspStrategy) -> GraspAttempt:
    """Roll one attachment attempt against the nearest capturable object.

    A no-op (attempted=False) when nothing is inside the capture window; a
    successful roll rigidly attaches the object to the hand.
    """
    model = world.scene.grasp
    candidates = []
    for obj in world.objects:
        if obj.fallen:
            continue
        planar = math.hypot(obj.x - world.hand.x, obj.y - world.hand.y)
        height = world.hand.z - obj.top
        if planar <= model.capture_radius and abs(height) <= model.capture_z:
            candidates.append((planar, height, obj))
    if not candidates:
        attempt = GraspAttempt(False, False, strategy, None, 0.0, math.inf)
        world.last_attempt = attempt
        return attempt
    planar, height, obj = min(candidates, key=lambda c: c[0])
    q = grasp_probability(model, obj.kind, strategy, obj.overhang_fraction(),
                          planar, height)
    attached = bool(world.rng.random() < q)
    if attached:
        world.attached = obj.name
        world.attachment_ever = True
        world.attach_offset = (obj.x - world.hand.x, obj.y - world.hand.y,
                               obj.z - world.hand.z)
    attempt = GraspAttempt(True, attached, strategy, obj.name, q, planar)
    world.last_attempt = attempt
    return attempt


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _clamp_delta(delta: np.ndarray, scene: SceneConfig, dt: float) -> np.ndarray:
    out = delta.astype(np.float64).copy()
    lin = out[:3]
    max_lin = scene.max_linear_speed * dt
    norm = float(np.linalg.norm(lin))
    if norm > max_lin and norm > 0.0:
        out[:3] = lin * (max_lin / norm)
    max_ang = scene.max_angular_speed * dt
    out[3:] = np.clip(out[3:], -max_ang, max_ang)
    return out


def _infer_strategy(world: WorldState, command: Action) -> GraspStrategy:
    """Closing with the 1-DoF grip command is the generic power grasp; a
    shaped per-joint close is a slide pick when the target already hangs over
    the edge and a direct pick otherwise."""
    if isinstance(command.hand, GripCommand):
        return GraspStrategy.POWER_GRASP
    nearest = world.nearest_object()
    if nearest is not None and nearest.overhang_fraction() >= world.scene.grasp.overhang_threshold:
        return GraspStrategy.SLIDE_AND_PICK
    return GraspStrategy.DIRECT_PICK


def step_world(world: WorldState, command: Action, dt: float) -> WorldState:
    """Advance one tick in place (the mutated world is also returned)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    scene = world.scene

    # 1. Arm motion, clamped to velocity limits and the workspace box.
    delta = _clamp_delta(command.arm_delta, scene, dt)
    hand = world.hand
    nx = float(np.clip(hand.x + delta[0], *scene.workspace_x))
    ny = float(np.clip(hand.y + delta[1], *scene.workspace_y))
    nz = float(np.clip(hand.z + delta[2], *scene.workspace_z))
    applied = (nx - hand.x, ny - hand.y)
    world.hand = ArmPose(nx, ny, nz,
                         hand.roll + delta[3], hand.pitch + delta[4], hand.yaw + delta[5])

    # 2. Joints chase their targets under the joint speed limit.
    if isinstance(command.hand, GripCommand):
        targets = joints_from_synergy(command.hand.value)
    else:
        targets = command.hand.targets
    max_step = scene.max_joint_speed * dt
    world.joints = world.joints + np.clip(targets - world.joints, -max_step, max_step)
    synergy = world.synergy

    # 3. Sticking slide: planar contact with a partially closed hand drags
    #    the object by the applied hand displacement.
    if world.attached is None and scene.push_min_synergy <= world._prev_synergy < scene.close_trigger_synergy:
        for obj in world.objects:
            if obj.fallen:
                continue
            planar = math.hypot(obj.x - hand.x, obj.y - hand.y)
            if planar <= scene.push_radius and hand.z <= obj.top + scene.push_z_tol:
                obj.x = float(np.clip(obj.x + applied[0], *scene.table_x))
                obj.y = min(obj.y + applied[1], scene.table_y_back)

    # 4. Closing across the trigger rolls a grasp attempt.
    if world._prev_synergy < scene.close_trigger_synergy <= synergy and world.attached is None:
        attempt_grasp(world, _infer_strategy(world, command))

    # 5. Opening across the trigger releases an attached object.
    if world.attached is not None and synergy < scene.open_trigger_synergy <= world._prev_synergy:
        released = world.object_by_name(world.attached)
        world.attached = None
        _settle(world, released)

    # 6. Attached object rigidly follows the hand.
    if world.attached is not None:
        obj = world.object_by_name(world.attached)
        obj.x = world.hand.x + world.attach_offset[0]
        obj.y = world.hand.y + world.attach_offset[1]
        obj.z = world.hand.z + world.attach_offset[2]

    # 7. Unsupported objects fall.
    for obj in world.objects:
        if obj.fallen or obj.name == world.attached:
            continue
        if obj.overhang_fraction() > scene.grasp.fall_threshold:
            _drop_to_floor(obj)

    world._prev_synergy = synergy
    return world


def _settle(world: WorldState, obj: ObjectState) -> None:
    if obj.y < 0.0 or obj.overhang_fraction() > world.scene.grasp.fall_threshold:
        _drop_to_floor(obj)
    else:
        obj.z = obj.rest_z


def _drop_to_floor(obj: ObjectState) -> None:
    obj.fallen = True
    obj.z = obj.rest_z - 0.40
    obj.y = min(obj.y, -obj.spec.footprint[1])


# ---------------------------------------------------------------------------
# Outcome
# ---------------------------------------------------------------------------

def _rest_region(world: WorldState, obj: ObjectState) -> RestRegion:
    if obj.name == world.attached:
        return RestRegion.HELD
    if obj.fallen:
        return RestRegion.FLOOR
    for color, (px, py) in world.scene.plate_centers.items():
        if math.hypot(obj.x - px, obj.y - py) <= world.scene.plate_radius:
            return RestRegion.PLATE_YELLOW if color is PlateColor.YELLOW else RestRegion.PLATE_PURPLE
    return RestRegion.TABLE


def outcome(world: WorldState, target: ObjectKind,
            nearest_at_grasp_entry: Optional[str]) -> WorldOutcome:
    """Ground truth summary for scoring a finished episode."""
    obj = world.object_by_name(target.value)
    return WorldOutcome(
        nearest_at_grasp_entry=nearest_at_grasp_entry,
        attachment_ever=world.attachment_ever,
        target_rest=_rest_region(world, obj),
        target_name=obj.name,
    )
