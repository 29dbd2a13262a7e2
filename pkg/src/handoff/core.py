"""Shared domain types: poses, hand state, images, the event signal, instructions.

The event signal sigma is a scalar in [0, 1] emitted by every policy each
tick.  Debounced threshold crossings of that signal (EdgeDetector) are the
only mechanism by which control is handed from one policy to another.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

__all__ = [
    "ArmPose",
    "HandState",
    "Image",
    "EventSample",
    "Edge",
    "EdgeDetector",
    "detect_edge",
    "ObjectKind",
    "PlateColor",
    "Instruction",
    "InstructionError",
    "NoObjectError",
    "NoPlateError",
    "AmbiguousInstructionError",
    "Vocabulary",
    "parse_instruction",
    "format_instruction",
    "GripCommand",
    "JointCommand",
    "Action",
    "Observation",
    "CLOSED_POSE",
    "INDEX_MCP",
    "synergy_from_joints",
    "joints_from_synergy",
    "read_ppm",
    "write_ppm",
]


# 13-motor hand layout: thumb (3), index (3), middle (3), ring (3), pinky (1).
JOINT_NAMES = (
    "thumb_cmc", "thumb_mcp", "thumb_ip",
    "index_mcp", "index_pip", "index_dip",
    "middle_mcp", "middle_pip", "middle_dip",
    "ring_mcp", "ring_pip", "ring_dip",
    "pinky_mcp",
)
INDEX_MCP = 3

# Joint angles (rad) of the fully closed power grasp; synergy 1.0 maps here.
CLOSED_POSE = np.array(
    [0.9, 1.1, 0.8,
     1.4, 1.5, 1.1,
     1.4, 1.5, 1.1,
     1.3, 1.4, 1.0,
     1.2],
    dtype=np.float64,
)


def synergy_from_joints(joints: np.ndarray) -> float:
    """Normalized mean flexion: 0 is fully open, 1 is the closed power pose."""
    ratios = np.asarray(joints, dtype=np.float64) / CLOSED_POSE
    return float(np.clip(np.mean(ratios), 0.0, 1.0))


def joints_from_synergy(synergy: float) -> np.ndarray:
    return float(np.clip(synergy, 0.0, 1.0)) * CLOSED_POSE


@dataclass(frozen=True)
class ArmPose:
    """End effector pose: position in meters, orientation in radians."""

    x: float
    y: float
    z: float
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "roll", "pitch", "yaw"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite pose field {name}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @classmethod
    def from_array(cls, a) -> "ArmPose":
        a = [float(v) for v in a]
        return cls(*a)

    def planar_distance(self, x: float, y: float) -> float:
        return math.hypot(self.x - x, self.y - y)


@dataclass(frozen=True)
class HandState:
    """13 joint angles plus the derived grasp-synergy scalar."""

    joints: np.ndarray
    synergy: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (13,):
            raise ValueError("hand state requires 13 joint angles")
        object.__setattr__(self, "joints", joints)
        if self.synergy is None:
            object.__setattr__(self, "synergy", synergy_from_joints(joints))

    @classmethod
    def open_hand(cls) -> "HandState":
        return cls(np.zeros(13))


# ---------------------------------------------------------------------------
# Images (binary PPM / P6 is the on-disk interchange format)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Image:
    """Row-major 8-bit RGB raster."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer length {len(self.pixels)} != {self.width}x{self.height}x3"
            )

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width, 3)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Image":
        a = np.ascontiguousarray(a, dtype=np.uint8)
        h, w, c = a.shape
        if c != 3:
            raise ValueError("expected HxWx3 array")
        return cls(width=w, height=h, pixels=a.tobytes())


def write_ppm(img: Image, path: Union[str, Path]) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels)


def read_ppm(path: Union[str, Path]) -> Image:
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # Header is three whitespace-separated tokens after the magic; comment
    # lines starting with '#' may appear between tokens.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = data[pos:pos + width * height * 3]
    return Image(width=width, height=height, pixels=pixels)


# ---------------------------------------------------------------------------
# Event signal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventSample:
    """One tick of the event signal; sigma is clamped to [0, 1] on construction."""

    sigma: float
    tick: int

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError("tick must be non-negative")
        object.__setattr__(self, "sigma", float(min(1.0, max(0.0, self.sigma))))


class Edge(Enum):
    NONE = "none"
    RISING = "rising"
    FALLING = "falling"


@dataclass
class EdgeDetector:
    """Debounced hysteresis detector over the event signal.

    RISING fires on the first tick where sigma has been above high_threshold
    for debounce_ticks consecutive ticks since the last FALLING (or since
    construction); FALLING is symmetric below low_threshold.  Samples in the
    hysteresis band reset both run lengths.  Fired edges strictly alternate.
    """

    high_threshold: float = 0.9
    low_threshold: float = 0.1
    debounce_ticks: int = 3
    _high_run: int = field(default=0, repr=False)
    _low_run: int = field(default=0, repr=False)
    _last_edge: Edge = field(default=Edge.NONE, repr=False)

    def __post_init__(self):
        if not self.low_threshold < self.high_threshold:
            raise ValueError("low_threshold must be below high_threshold")
        if self.debounce_ticks < 1:
            raise ValueError("debounce_ticks must be >= 1")

    def update(self, sigma: float) -> Edge:
        sigma = min(1.0, max(0.0, float(sigma)))
        if sigma > self.high_threshold:
            self._high_run += 1
            self._low_run = 0
            if self._high_run == self.debounce_ticks and self._last_edge is not Edge.RISING:
                self._last_edge = Edge.RISING
                return Edge.RISING
        elif sigma < self.low_threshold:
            self._low_run += 1
            self._high_run = 0
            if self._low_run == self.debounce_ticks and self._last_edge is not Edge.FALLING:
                self._last_edge = Edge.FALLING
                return Edge.FALLING
        else:
            self._high_run = 0
            self._low_run = 0
        return Edge.NONE

    def reset(self) -> None:
        self._high_run = 0
        self._low_run = 0
        self._last_edge = Edge.NONE


def detect_edge(detector: EdgeDetector, sample: EventSample) -> Edge:
    return detector.update(sample.sigma)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------

class ObjectKind(Enum):
    PEPPER = "pepper"
    TAPE = "tape"
    PAPER = "paper"
    BLOCK = "block"


class PlateColor(Enum):
    YELLOW = "yellow"
    PURPLE = "purple"


class InstructionError(ValueError):
    pass


class NoObjectError(InstructionError):
    pass


class NoPlateError(InstructionError):
    pass


class AmbiguousInstructionError(InstructionError):
    pass


DEFAULT_VOCABULARY_TEXT = """\
# Instruction vocabulary: enum value = comma-separated keywords.
object.pepper = pepper, red pepper, bell pepper
object.tape = tape, tape roll, roll of tape
object.paper = paper, blue paper, sheet of paper
object.block = block, blue block, cuboid
plate.yellow = yellow
plate.purple = purple
"""


@dataclass(frozen=True)
class Vocabulary:
    objects: Mapping[ObjectKind, tuple]
    plates: Mapping[PlateColor, tuple]

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls.from_text(DEFAULT_VOCABULARY_TEXT)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        objects: dict = {}
        plates: dict = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            words = tuple(w.strip().lower() for w in value.split(",") if w.strip())
            if key.startswith("object."):
                objects[ObjectKind(key[len("object."):])] = words
            elif key.startswith("plate."):
                plates[PlateColor(key[len("plate."):])] = words
            else:
                raise ValueError(f"unknown vocabulary key {key!r}")
        return cls(objects=objects, plates=plates)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Vocabulary":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class Instruction:
    raw_text: str
    object: ObjectKind
    plate: PlateColor


def _keyword_hits(text: str, table: Mapping) -> set:
    hits = set()
    for enum_value, words in table.items():
        for word in words:
            if re.search(rf"\b{re.escape(word)}\b", text):
                hits.add(enum_value)
                break
    return hits


def parse_instruction(text: str, vocabulary: Optional[Vocabulary] = None) -> Instruction:
    """Case-insensitive keyword parse of an instruction into (object, plate).

    Raises NoObjectError / NoPlateError when a slot has no match and
    AmbiguousInstructionError when two different nouns of the same slot match.
    """
    vocab = vocabulary or Vocabulary.default()
    lowered = text.lower()
    objects = _keyword_hits(lowered, vocab.objects)
    plates = _keyword_hits(lowered, vocab.plates)
    if len(objects) > 1:
        raise AmbiguousInstructionError(f"multiple object nouns in {text!r}")
    if len(plates) > 1:
        raise AmbiguousInstructionError(f"multiple plate colors in {text!r}")
    if not objects:
        raise NoObjectError(f"no known object in {text!r}")
    if not plates:
        raise NoPlateError(f"no known plate color in {text!r}")
    return Instruction(raw_text=text, object=objects.pop(), plate=plates.pop())


def format_instruction(instruction: Instruction) -> str:
    """Canonical rendering; parse_instruction(format_instruction(i)) round-trips."""
    return (
        f"pick the {instruction.object.value} and place it on the "
        f"{instruction.plate.value} plate"
    )


# ---------------------------------------------------------------------------
# Actions and observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GripCommand:
    """1-DoF grasp command; value 0 is fully open, 1 the closed power pose."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(min(1.0, max(0.0, self.value))))


@dataclass(frozen=True)
class JointCommand:
    """Per-joint target angles for the 13-motor hand."""

    targets: np.ndarray

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.shape != (13,):
            raise ValueError("joint command requires 13 targets")
        object.__setattr__(self, "targets", targets)


HandCommand = Union[GripCommand, JointCommand]


@dataclass(frozen=True)
class Action:
    """Per-tick command: arm pose delta, hand command, and the event signal."""

    arm_delta: np.ndarray
    hand: HandCommand
    sigma: float

    def __post_init__(self):
        delta = np.asarray(self.arm_delta, dtype=np.float64)
        if delta.shape != (6,):
            raise ValueError("arm delta must have 6 components")
        if not np.all(np.isfinite(delta)):
            raise ValueError("arm delta must be finite")
        object.__setattr__(self, "arm_delta", delta)
        object.__setattr__(self, "sigma", float(min(1.0, max(0.0, self.sigma))))

    @classmethod
    def hold(cls, joints: np.ndarray, sigma: float = 0.0) -> "Action":
        return cls(np.zeros(6), JointCommand(np.array(joints, copy=True)), sigma)


@dataclass(frozen=True)
class Observation:
    """Everything a policy may see at one tick.

    Images are rendered on demand; policies that act on state alone receive
    None for both cameras and the control loop skips rasterization.
    """

    arm: ArmPose
    hand: HandState
    instruction: Instruction
    tick: int
    cam1: Optional[Image] = None
    cam2: Optional[Image] = None
