"""Scene, grasp-model, and policy configuration with INI-file loading.

Every numeric that calibrates simulated behavior lives here so experiments
can re-run against alternative worlds without code changes.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Tuple, Union

from .core import ObjectKind, PlateColor

__all__ = [
    "ObjectSpec",
    "OBJECT_SPECS",
    "GraspModelConfig",
    "SceneConfig",
    "VlaStubConfig",
    "GraspStubConfig",
    "load_scene_config",
    "write_scene_config",
]


@dataclass(frozen=True)
class ObjectSpec:
    """Static geometry and grasp affordances of one object kind."""

    kind: ObjectKind
    footprint: Tuple[float, float]      # width (x) x depth (y), meters
    height: float                       # meters
    thin: bool
    direct_pick_height_tol: float       # |hand z - object top| window for a direct pick
    slide_friction: float = 1.0         # 1.0 = sticking slide
    color: Tuple[int, int, int] = (200, 200, 200)


OBJECT_SPECS: Dict[ObjectKind, ObjectSpec] = {
    ObjectKind.PEPPER: ObjectSpec(
        ObjectKind.PEPPER, footprint=(0.06, 0.06), height=0.07,
        thin=False, direct_pick_height_tol=0.06, color=(200, 30, 30)),
    ObjectKind.TAPE: ObjectSpec(
        ObjectKind.TAPE, footprint=(0.10, 0.10), height=0.035,
        thin=True, direct_pick_height_tol=0.02, color=(90, 90, 95)),
    ObjectKind.PAPER: ObjectSpec(
        ObjectKind.PAPER, footprint=(0.148, 0.105), height=0.004,
        thin=True, direct_pick_height_tol=0.02, color=(60, 110, 220)),
    # 7.5 x 7.5 x 1 cm cuboid used only in the multi-modal grasp experiment.
    ObjectKind.BLOCK: ObjectSpec(
        ObjectKind.BLOCK, footprint=(0.075, 0.075), height=0.01,
        thin=True, direct_pick_height_tol=0.02, color=(30, 60, 160)),
}


@dataclass(frozen=True)
class GraspModelConfig:
    """Analytic grasp-attachment model.

    Attachment is Bernoulli(q) with
        q = q_base(kind, strategy, overhang) * exp(-(planar_offset / lambda_offset)^2)
    gated by the capture window, the thin-object height tolerance for direct
    picks, and edge support for slide picks.  lambda_offset is calibrated by
    Monte Carlo so the offset-sweep statistics land on their targets
    (success well above 0.9 at 5 cm, below 0.5 at 15 cm).
    """

    lambda_offset: float = 0.095
    overhang_threshold: float = 0.30    # fraction of footprint that must hang over the edge
    fall_threshold: float = 0.55        # beyond this overhang an unattached object falls
    capture_radius: float = 0.28        # planar reach of a closing hand
    capture_z: float = 0.06             # |hand z - object top| reach of a closing hand
    q_direct: float = 0.95
    q_slide_supported: float = 0.95
    q_slide_unsupported: float = 0.02
    thin_height_penalty: float = 0.05
    # Generic 1-DoF power grasp, per object kind.
    q_power: Dict[ObjectKind, float] = field(default_factory=lambda: {
        ObjectKind.PEPPER: 0.295,
        ObjectKind.TAPE: 0.04,
        ObjectKind.PAPER: 0.02,
        ObjectKind.BLOCK: 0.08,
    })


@dataclass(frozen=True)
class SceneConfig:
    """Table geometry, plate placement, camera resolution, and motion limits.

    The table surface is z = 0 with its front edge along y = 0; y < 0 is off
    the table.  Objects are spawned uniformly inside the test area.
    """

    table_x: Tuple[float, float] = (-0.5, 0.5)
    table_y_back: float = 0.65
    workspace_x: Tuple[float, float] = (-0.8, 0.8)
    workspace_y: Tuple[float, float] = (-0.45, 1.05)
    workspace_z: Tuple[float, float] = (0.0, 0.8)
    plate_centers: Dict[PlateColor, Tuple[float, float]] = field(default_factory=lambda: {
        PlateColor.YELLOW: (0.32, 0.45),
        PlateColor.PURPLE: (-0.32, 0.45),
    })
    plate_radius: float = 0.08
    test_area_x: Tuple[float, float] = (-0.2, 0.2)
    test_area_y: Tuple[float, float] = (0.15, 0.55)
    min_object_separation: float = 0.12
    hand_home: Tuple[float, float, float] = (0.0, 0.05, 0.30)
    camera_width: int = 64
    camera_height: int = 48
    tick_hz: float = 5.0
    max_linear_speed: float = 0.30      # m/s
    max_angular_speed: float = 1.5      # rad/s
    max_joint_speed: float = 12.0       # rad/s
    push_radius: float = 0.075          # planar contact range for sliding
    push_z_tol: float = 0.03            # hand must be at most this far above the object top
    push_min_synergy: float = 0.15
    close_trigger_synergy: float = 0.55
    open_trigger_synergy: float = 0.35
    grasp: GraspModelConfig = field(default_factory=GraspModelConfig)

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_hz


@dataclass(frozen=True)
class VlaStubConfig:
    """Reference approach/transport policy calibration.

    The per-episode goal estimate is the true target position plus Gaussian
    noise; the stds are calibrated so the measured planar reach offsets mean
    2.8 cm with two cameras and 12 cm with one (depth axis dominated).
    """

    camera_mode: str = "dual"           # "dual" | "single"
    dual_noise_std: float = 0.022
    single_depth_std: float = 0.145     # y axis: depth is what one camera cannot see
    single_cross_std: float = 0.024
    approach_speed: float = 0.25        # m/s
    transport_speed: float = 0.30
    rise_distance: float = 0.05         # sigma starts rising inside this range of the goal
    sat_distance: float = 0.015         # sigma saturates inside this range
    hover_height: float = 0.05          # above object top during approach
    transport_height: float = 0.14
    zero_noise: bool = False            # test override: perfect localization


@dataclass(frozen=True)
class GraspStubConfig:
    """Reference grasp policy calibration.

    Strategy choice is logistic in the object's distance to the table edge:
    p(slide) = 1 / (1 + exp((d - d0) / k)).  The stub corrects lateral error
    only within align_radius of its own start pose (the coverage of its
    training demonstrations); residual offset degrades attachment through the
    grasp model.
    """

    mode_d0: float = 0.06
    mode_k: float = 0.015
    recovery_enabled: bool = True
    lift_height: float = 0.13
    sigma_tail_ticks: int = 10
    align_radius: float = 0.06
    close_synergy: float = 0.85
    open_synergy: float = 0.08
    push_synergy: float = 0.50
    push_step: float = 0.010            # meters per tick while sliding
    slide_target_overhang: float = 0.40
    slide_standoff: float = 0.06
    close_ticks: int = 4
    fail_clearance: float = 0.12        # mid-air close height for a deliberate failure
    force_first_attempt_failure: bool = False


# ---------------------------------------------------------------------------
# INI round trip
# ---------------------------------------------------------------------------

def _pair(text: str) -> Tuple[float, float]:
    a, b = (float(v) for v in text.split(","))
    return (a, b)


def write_scene_config(scene: SceneConfig, path: Union[str, Path]) -> None:
    cp = configparser.ConfigParser()
    cp["table"] = {
        "x": f"{scene.table_x[0]}, {scene.table_x[1]}",
        "y_back": str(scene.table_y_back),
    }
    cp["plates"] = {
        "yellow": f"{scene.plate_centers[PlateColor.YELLOW][0]}, {scene.plate_centers[PlateColor.YELLOW][1]}",
        "purple": f"{scene.plate_centers[PlateColor.PURPLE][0]}, {scene.plate_centers[PlateColor.PURPLE][1]}",
        "radius": str(scene.plate_radius),
    }
    cp["test_area"] = {
        "x": f"{scene.test_area_x[0]}, {scene.test_area_x[1]}",
        "y": f"{scene.test_area_y[0]}, {scene.test_area_y[1]}",
        "min_separation": str(scene.min_object_separation),
    }
    cp["camera"] = {"width": str(scene.camera_width), "height": str(scene.camera_height)}
    cp["control"] = {
        "tick_hz": str(scene.tick_hz),
        "max_linear_speed": str(scene.max_linear_speed),
    }
    cp["grasp_model"] = {
        "lambda_offset": str(scene.grasp.lambda_offset),
        "overhang_threshold": str(scene.grasp.overhang_threshold),
        "fall_threshold": str(scene.grasp.fall_threshold),
        "capture_radius": str(scene.grasp.capture_radius),
        "q_direct": str(scene.grasp.q_direct),
    }
    with open(path, "w") as fh:
        cp.write(fh)


def load_scene_config(path: Union[str, Path]) -> SceneConfig:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    scene = SceneConfig()
    grasp = scene.grasp
    if cp.has_section("grasp_model"):
        g = cp["grasp_model"]
        grasp = replace(
            grasp,
            lambda_offset=g.getfloat("lambda_offset", grasp.lambda_offset),
            overhang_threshold=g.getfloat("overhang_threshold", grasp.overhang_threshold),
            fall_threshold=g.getfloat("fall_threshold", grasp.fall_threshold),
            capture_radius=g.getfloat("capture_radius", grasp.capture_radius),
            q_direct=g.getfloat("q_direct", grasp.q_direct),
        )
    kwargs = {"grasp": grasp}
    if cp.has_section("table"):
        kwargs["table_x"] = _pair(cp["table"].get("x", "-0.5, 0.5"))
        kwargs["table_y_back"] = cp["table"].getfloat("y_back", scene.table_y_back)
    if cp.has_section("plates"):
        p = cp["plates"]
        kwargs["plate_centers"] = {
            PlateColor.YELLOW: _pair(p.get("yellow", "0.32, 0.45")),
            PlateColor.PURPLE: _pair(p.get("purple", "-0.32, 0.45")),
        }
        kwargs["plate_radius"] = p.getfloat("radius", scene.plate_radius)
    if cp.has_section("test_area"):
        t = cp["test_area"]
        kwargs["test_area_x"] = _pair(t.get("x", "-0.2, 0.2"))
        kwargs["test_area_y"] = _pair(t.get("y", "0.15, 0.55"))
        kwargs["min_object_separation"] = t.getfloat(
            "min_separation", scene.min_object_separation)
    if cp.has_section("camera"):
        kwargs["camera_width"] = cp["camera"].getint("width", scene.camera_width)
        kwargs["camera_height"] = cp["camera"].getint("height", scene.camera_height)
    if cp.has_section("control"):
        kwargs["tick_hz"] = cp["control"].getfloat("tick_hz", scene.tick_hz)
        kwargs["max_linear_speed"] = cp["control"].getfloat(
            "max_linear_speed", scene.max_linear_speed)
    return replace(scene, **kwargs)
