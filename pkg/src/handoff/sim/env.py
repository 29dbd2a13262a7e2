"""Episode-facing facade over the world: reset, observe, step, outcome."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import SceneConfig
from ..core import Action, ArmPose, HandState, Instruction, Observation, ObjectKind
from .camera import Camera, render
from .world import WorldOutcome, WorldState, outcome, spawn_world, step_world

__all__ = ["TruthSnapshot", "TruthObject", "PickPlaceEnv"]


@dataclass(frozen=True)
class TruthObject:
    kind: ObjectKind
    x: float
    y: float
    top: float
    fallen: bool


@dataclass(frozen=True)
class TruthSnapshot:
    """Ground-truth view handed to reference policies (and mirrored over the
    wire for remote ones): object poses, attachment, plate centers, and the
    per-episode seed that policies derive their own randomness from."""

    objects: Dict[str, TruthObject]
    attached: Optional[str]
    plate_centers: Dict[str, Tuple[float, float]]
    episode_seed: int
    hand_synergy: float

    def object_for(self, kind: ObjectKind) -> TruthObject:
        return self.objects[kind.value]


class PickPlaceEnv:
    """Owns one world per episode and renders observations on demand."""

    def __init__(self, scene: Optional[SceneConfig] = None):
        self.scene = scene or SceneConfig()
        self.world: Optional[WorldState] = None
        self._episode_seed = 0

    def reset(
        self,
        seed: int,
        kinds: Optional[List[ObjectKind]] = None,
        positions: Optional[Dict[ObjectKind, Tuple[float, float]]] = None,
        hand_start: Optional[Tuple[float, float, float]] = None,
    ) -> WorldState:
        self._episode_seed = int(seed)
        self.world = spawn_world(self.scene, seed, kinds=kinds, positions=positions,
                                 hand_start=hand_start)
        return self.world

    def truth(self) -> TruthSnapshot:
        w = self._require_world()
        return TruthSnapshot(
            objects={
                o.name: TruthObject(o.kind, o.x, o.y, o.top, o.fallen)
                for o in w.objects
            },
            attached=w.attached,
            plate_centers={c.value: xy for c, xy in self.scene.plate_centers.items()},
            episode_seed=self._episode_seed,
            hand_synergy=w.synergy,
        )

    def observe(self, instruction: Instruction, tick: int,
                include_images: bool = False) -> Observation:
        w = self._require_world()
        cam1 = cam2 = None
        if include_images:
            cam1 = render(w, Camera.CAM1_STATIC)
            cam2 = render(w, Camera.CAM2_WRIST)
        return Observation(
            arm=w.hand,
            hand=HandState(np.array(w.joints, copy=True)),
            instruction=instruction,
            tick=tick,
            cam1=cam1,
            cam2=cam2,
        )

    def step(self, command: Action) -> None:
        step_world(self._require_world(), command, self.scene.dt)

    def nearest_object_name(self) -> Optional[str]:
        obj = self._require_world().nearest_object()
        return obj.name if obj else None

    def outcome(self, target: ObjectKind,
                nearest_at_grasp_entry: Optional[str]) -> WorldOutcome:
        return outcome(self._require_world(), target, nearest_at_grasp_entry)

    def _require_world(self) -> WorldState:
        if self.world is None:
            raise RuntimeError("env not reset")
        return self.world
