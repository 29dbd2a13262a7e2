"""Event-signal policy switching for dexterous pick-and-place.

A high-level language-conditioned policy moves the arm; a per-object grasp
policy takes over when a shared scalar event signal crosses a threshold, and
hands control back the same way.  This package provides the switching
framework, a deterministic kinematic simulator, calibrated scripted
reference policies, a remote-policy wire protocol, the demonstration
dataset pipeline, and an evaluation harness.
"""

from .core import (
    Action,
    ArmPose,
    Edge,
    EdgeDetector,
    EventSample,
    GripCommand,
    HandState,
    Image,
    Instruction,
    JointCommand,
    Observation,
    ObjectKind,
    PlateColor,
    Vocabulary,
    detect_edge,
    format_instruction,
    parse_instruction,
)
from .config import GraspStubConfig, SceneConfig, VlaStubConfig
from .orchestrator import (
    EpisodeResult,
    MachineMode,
    PhaseMachine,
    PhaseTimeouts,
    PolicyTable,
    Score,
    ScoreReason,
    TaskPhase,
    run_episode,
    score_episode,
)

__version__ = "0.1.0"
