from .camera import Camera, cam1_project, cam2_project, render
from .env import PickPlaceEnv, TruthObject, TruthSnapshot
from .world import (
    GraspAttempt,
    GraspStrategy,
    ObjectState,
    RestRegion,
    WorldOutcome,
    WorldState,
    attempt_grasp,
    grasp_probability,
    outcome,
    spawn_world,
    step_world,
)

__all__ = [
    "Camera",
    "cam1_project",
    "cam2_project",
    "render",
    "PickPlaceEnv",
    "TruthObject",
    "TruthSnapshot",
    "GraspAttempt",
    "GraspStrategy",
    "ObjectState",
    "RestRegion",
    "WorldOutcome",
    "WorldState",
    "attempt_grasp",
    "grasp_probability",
    "outcome",
    "spawn_world",
    "step_world",
]
