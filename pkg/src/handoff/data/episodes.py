"""On-disk demonstration episode format.

One directory per episode:

    <id>/meta.json      instruction, markers, seed, camera, flags
    <id>/steps.jsonl    one record per tick: arm pose, joints, operator
                        event-signal button state, frame paths
    <id>/frames/        tNNNN_cam1.ppm / tNNNN_cam2.ppm (binary P6)

Markers are explicit labeled boundaries [name, start, end) that partition
[0, len(steps)); the single operator event toggle alone cannot delimit the
grasp segment, so both the scripted generator and the teleop console write
markers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..core import Image, read_ppm, write_ppm

__all__ = ["EpisodeStep", "RawEpisode", "MARKER_ORDER"]

MARKER_ORDER = ("approach", "grasp", "transport", "release")


@dataclass(frozen=True)
class EpisodeStep:
    tick: int
    arm: Tuple[float, ...]
    joints: Tuple[float, ...]
    synergy: float
    sigma_operator: int
    cam1: str
    cam2: str

    def to_json(self) -> str:
        return json.dumps({
            "tick": self.tick,
            "arm": list(self.arm),
            "joints": list(self.joints),
            "synergy": self.synergy,
            "sigma_operator": self.sigma_operator,
            "cam1": self.cam1,
            "cam2": self.cam2,
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "EpisodeStep":
        d = json.loads(line)
        return cls(tick=d["tick"], arm=tuple(d["arm"]), joints=tuple(d["joints"]),
                   synergy=d["synergy"], sigma_operator=d["sigma_operator"],
                   cam1=d["cam1"], cam2=d["cam2"])


@dataclass
class RawEpisode:
    episode_id: str
    set_name: str                      # "vla" | "diffusion"
    object_kind: str
    plate: Optional[str]
    instruction: str
    seed: int
    operator: str
    tick_hz: float
    camera: Tuple[int, int]            # (width, height)
    markers: List[Tuple[str, int, int]]
    steps: List[EpisodeStep]
    forced_recovery: bool = False
    strategy: Optional[str] = None
    start_clearance: Optional[float] = None
    images: Dict[str, Image] = field(default_factory=dict, repr=False)
    root: Optional[Path] = None

    def __post_init__(self):
        self.validate_markers()
        for step in self.steps:
            if step.sigma_operator not in (0, 1):
                raise ValueError(
                    f"{self.episode_id}: sigma_operator must be a button state (0/1)")

    def validate_markers(self) -> None:
        if not self.markers:
            raise ValueError(f"{self.episode_id}: no markers")
        expected_start = 0
        names = []
        for name, start, end in self.markers:
            if start != expected_start or end <= start:
                raise ValueError(
                    f"{self.episode_id}: markers do not partition the episode")
            expected_start = end
            names.append(name)
        if expected_start != len(self.steps):
            raise ValueError(
                f"{self.episode_id}: markers cover {expected_start} of {len(self.steps)} steps")
        order = [n for n in MARKER_ORDER if n in names]
        if names != order:
            raise ValueError(f"{self.episode_id}: marker order {names} is invalid")

    def marker_range(self, name: str) -> Optional[Tuple[int, int]]:
        for n, start, end in self.markers:
            if n == name:
                return (start, end)
        return None

    def meta_dict(self) -> dict:
        return {
            "id": self.episode_id,
            "set": self.set_name,
            "object": self.object_kind,
            "plate": self.plate,
            "instruction": self.instruction,
            "seed": self.seed,
            "operator": self.operator,
            "tick_hz": self.tick_hz,
            "camera": {"width": self.camera[0], "height": self.camera[1]},
            "markers": [[n, s, e] for n, s, e in self.markers],
            "forced_recovery": self.forced_recovery,
            "strategy": self.strategy,
            "start_clearance": self.start_clearance,
        }

    def save(self, root: Union[str, Path]) -> Path:
        out = Path(root) / self.episode_id
        frames = out / "frames"
        frames.mkdir(parents=True, exist_ok=True)
        (out / "meta.json").write_text(json.dumps(self.meta_dict(), indent=2,
                                                  sort_keys=True))
        (out / "steps.jsonl").write_text(
            "\n".join(s.to_json() for s in self.steps) + "\n")
        for rel, image in self.images.items():
            write_ppm(image, out / rel)
        self.root = out
        return out

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RawEpisode":
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text())
        steps = [EpisodeStep.from_json(line)
                 for line in (path / "steps.jsonl").read_text().splitlines() if line]
        return cls(
            episode_id=meta["id"],
            set_name=meta["set"],
            object_kind=meta["object"],
            plate=meta.get("plate"),
            instruction=meta["instruction"],
            seed=meta["seed"],
            operator=meta.get("operator", "unknown"),
            tick_hz=meta.get("tick_hz", 5.0),
            camera=(meta["camera"]["width"], meta["camera"]["height"]),
            markers=[(n, s, e) for n, s, e in meta["markers"]],
            steps=steps,
            forced_recovery=meta.get("forced_recovery", False),
            strategy=meta.get("strategy"),
            start_clearance=meta.get("start_clearance"),
            root=path,
        )

    def load_frame(self, rel_path: str) -> Image:
        if rel_path in self.images:
            return self.images[rel_path]
        if self.root is None:
            raise FileNotFoundError(f"episode has no root directory for {rel_path}")
        return read_ppm(self.root / rel_path)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.meta_dict(), sort_keys=True).encode())
        for step in self.steps:
            h.update(step.to_json().encode())
        for step in self.steps:
            for rel in (step.cam1, step.cam2):
                img = self.load_frame(rel)
                h.update(img.pixels)
        return h.hexdigest()
