"""Scripted batch demonstration generator.

Reproduces the data-collection protocol at desk scale: 20 teleop-equivalent
pick-and-place trials per (object, plate) combination for the
approach/transport set, and grasp-only trials starting 5 cm above the
object for the grasp set (40 tape, 40 paper, 30 pepper), including two to
three deliberate fail-and-recover demonstrations per object and both grasp
strategies for thin objects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..config import OBJECT_SPECS, GraspStubConfig, SceneConfig
from ..core import Instruction, ObjectKind, PlateColor, format_instruction, synergy_from_joints
from ..orchestrator import MachineMode, PhaseMachine, TaskPhase, run_episode
from ..policies import GraspReferencePolicy, make_policy_set, run_grasp_trial
from ..sim import Camera, PickPlaceEnv, render
from .episodes import EpisodeStep, RawEpisode

__all__ = ["CollectionPlan", "PlanMismatchError", "generate_demos"]


class PlanMismatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class CollectionPlan:
    vla_trials_per_combo: int = 20
    diffusion_trials: Dict[str, int] = field(default_factory=lambda: {
        "tape": 40, "paper": 40, "pepper": 30})
    recovery_trials_per_object: int = 3
    diffusion_start_clearance: float = 0.05
    vla_objects: Tuple[str, ...] = ("pepper", "tape", "paper")
    plates: Tuple[str, ...] = ("yellow", "purple")

    @classmethod
    def default(cls) -> "CollectionPlan":
        return cls()

    @classmethod
    def tiny(cls) -> "CollectionPlan":
        """Small plan for fast tests; same structure, fewer trials."""
        return cls(vla_trials_per_combo=2,
                   diffusion_trials={"tape": 6, "paper": 4, "pepper": 4},
                   recovery_trials_per_object=2)


def _episode_seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence([base, *path]).generate_state(1)[0])


class _StepRecorder:
    """Collects per-tick episode steps plus rendered frames."""

    def __init__(self):
        self.steps: List[dict] = []
        self.images: Dict[str, object] = {}

    def add(self, tick, obs, sigma_operator, phase_name):
        cam1 = f"frames/t{tick:04d}_cam1.ppm"
        cam2 = f"frames/t{tick:04d}_cam2.ppm"
        self.images[cam1] = obs.cam1
        self.images[cam2] = obs.cam2
        self.steps.append({
            "tick": tick,
            "arm": tuple(float(v) for v in obs.arm.as_array()),
            "joints": tuple(float(v) for v in obs.hand.joints),
            "synergy": float(obs.hand.synergy),
            "sigma_operator": sigma_operator,
            "phase": phase_name,
            "cam1": cam1,
            "cam2": cam2,
        })


def _markers_from_phases(phases: List[str]) -> List[Tuple[str, int, int]]:
    name_map = {"approach": "approach", "grasping": "grasp",
                "transport": "transport", "release": "release"}
    markers = []
    start = 0
    for i in range(1, len(phases) + 1):
        if i == len(phases) or phases[i] != phases[start]:
            markers.append((name_map[phases[start]], start, i))
            start = i
    return markers


def _generate_vla_episode(plan, scene, base_seed, combo_idx, trial_idx,
                          instruction) -> RawEpisode:
    for attempt in range(40):
        seed = _episode_seed(base_seed, 1, combo_idx, trial_idx, attempt)
        env = PickPlaceEnv(scene)
        policies = make_policy_set(instruction, scene, seed)
        machine = PhaseMachine(mode=MachineMode.HYBRID)
        recorder = _StepRecorder()

        def record(tick, obs, truth, phase, command):
            recorder.add(tick, obs, sigma_operator=0, phase_name=phase.value)

        result = run_episode(env, policies, machine, instruction, seed,
                             recorder=record)
        if result.final_phase is TaskPhase.DONE and result.score.value == 1.0:
            break
    else:
        raise PlanMismatchError(
            f"could not produce a successful demonstration for {instruction.raw_text}")

    phases = [s.pop("phase") for s in recorder.steps]
    markers = _markers_from_phases(phases)
    marker_names = [m[0] for m in markers]
    if marker_names != ["approach", "grasp", "transport", "release"]:
        raise PlanMismatchError(f"unexpected phase structure {marker_names}")
    grasp_start = markers[1][1]
    release_start = markers[3][1]
    steps = []
    for s in recorder.steps:
        s["sigma_operator"] = int(grasp_start <= s["tick"] < release_start)
        steps.append(EpisodeStep(**s))
    return RawEpisode(
        episode_id=f"vla-{instruction.object.value}-{instruction.plate.value}-{trial_idx:03d}",
        set_name="vla",
        object_kind=instruction.object.value,
        plate=instruction.plate.value,
        instruction=instruction.raw_text,
        seed=seed,
        operator="scripted-reference",
        tick_hz=scene.tick_hz,
        camera=(scene.camera_width, scene.camera_height),
        markers=markers,
        steps=steps,
        images=recorder.images,
    )


def _generate_diffusion_episode(plan, scene, base_seed, obj_idx, trial_idx,
                                kind: ObjectKind) -> RawEpisode:
    spec = OBJECT_SPECS[kind]
    forced = trial_idx < plan.recovery_trials_per_object
    # Two designated trials pin down the strategy mix for thin objects; the
    # rest sample the edge distance freely.
    want_strategy = None
    if spec.thin:
        if trial_idx == plan.recovery_trials_per_object:
            want_strategy = "slide_and_pick"
        elif trial_idx == plan.recovery_trials_per_object + 1:
            want_strategy = "direct_pick"

    for attempt in range(60):
        seed = _episode_seed(base_seed, 2, obj_idx, trial_idx, attempt)
        rng = np.random.default_rng(seed)
        if forced:
            y = rng.uniform(0.10, 0.18)
        elif want_strategy == "slide_and_pick":
            y = rng.uniform(0.015, 0.03)
        elif want_strategy == "direct_pick":
            y = rng.uniform(0.14, 0.18)
        else:
            y = rng.uniform(0.015, 0.18)
        x = rng.uniform(scene.test_area_x[0] * 0.8, scene.test_area_x[1] * 0.8)

        env = PickPlaceEnv(scene)
        cfg = GraspStubConfig(force_first_attempt_failure=forced)
        policy = GraspReferencePolicy(kind, cfg, scene, np.random.default_rng(seed + 1))
        recorder = _StepRecorder()

        def record(tick, obs, truth, action):
            recorder.add(tick, obs, sigma_operator=int(action.sigma >= 0.5),
                         phase_name="grasp")

        result = run_grasp_trial(
            env, policy, kind, seed=seed, position=(x, y),
            start_clearance=plan.diffusion_start_clearance,
            tail_ticks=cfg.sigma_tail_ticks, recorder=record)
        ok = result.success and len(recorder.steps) >= 10
        if ok and want_strategy is not None:
            ok = result.strategy == want_strategy
        if ok and forced:
            ok = result.attempts >= 2
        if ok:
            break
    else:
        raise PlanMismatchError(
            f"could not produce a {kind.value} grasp demonstration (trial {trial_idx})")

    steps = []
    for s in recorder.steps:
        s.pop("phase")
        steps.append(EpisodeStep(**s))
    return RawEpisode(
        episode_id=f"diff-{kind.value}-{trial_idx:03d}",
        set_name="diffusion",
        object_kind=kind.value,
        plate=None,
        instruction=f"grasp the {kind.value}",
        seed=seed,
        operator="scripted-reference",
        tick_hz=scene.tick_hz,
        camera=(scene.camera_width, scene.camera_height),
        markers=[("grasp", 0, len(steps))],
        steps=steps,
        forced_recovery=forced,
        strategy=result.strategy,
        start_clearance=plan.diffusion_start_clearance,
        images=recorder.images,
    )


def generate_demos(plan: CollectionPlan, seed: int, out_dir: Union[str, Path],
                   scene: Optional[SceneConfig] = None) -> dict:
    """Generate the full demonstration dataset and write its manifest.

    Fully reproducible: the manifest content hash is a pure function of
    (plan, seed, scene).
    """
    scene = scene or SceneConfig()
    out = Path(out_dir)
    episodes_dir = out / "episodes"
    episodes_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    counts: Dict[str, Dict[str, int]] = {"vla": {}, "diffusion": {}}

    for combo_idx, (obj_name, plate_name) in enumerate(
            (o, p) for o in plan.vla_objects for p in plan.plates):
        kind, plate = ObjectKind(obj_name), PlateColor(plate_name)
        instruction_text = format_instruction(Instruction("", kind, plate))
        instruction = Instruction(instruction_text, kind, plate)
        for trial_idx in range(plan.vla_trials_per_combo):
            ep = _generate_vla_episode(plan, scene, seed, combo_idx, trial_idx,
                                       instruction)
            ep.save(episodes_dir)
            entries.append(_manifest_entry(ep))
        counts["vla"][f"{obj_name}/{plate_name}"] = plan.vla_trials_per_combo

    for obj_idx, (obj_name, n_trials) in enumerate(sorted(plan.diffusion_trials.items())):
        kind = ObjectKind(obj_name)
        for trial_idx in range(n_trials):
            ep = _generate_diffusion_episode(plan, scene, seed, obj_idx, trial_idx,
                                             kind)
            ep.save(episodes_dir)
            entries.append(_manifest_entry(ep))
        counts["diffusion"][obj_name] = n_trials

    entries.sort(key=lambda e: e["id"])
    import hashlib
    content = hashlib.sha256(
        "".join(e["sha256"] for e in entries).encode()).hexdigest()
    manifest = {
        "plan": asdict(plan),
        "seed": seed,
        "scene": {"camera": [scene.camera_width, scene.camera_height],
                  "tick_hz": scene.tick_hz},
        "counts": counts,
        "episodes": entries,
        "content_hash": content,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _manifest_entry(ep: RawEpisode) -> dict:
    return {
        "id": ep.episode_id,
        "set": ep.set_name,
        "object": ep.object_kind,
        "plate": ep.plate,
        "steps": len(ep.steps),
        "forced_recovery": ep.forced_recovery,
        "strategy": ep.strategy,
        "sha256": ep.content_hash(),
    }
