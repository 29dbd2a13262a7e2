"""Export rules turning raw demonstrations into the two training sets.

The approach/transport set keeps only motion outside the grasp segment and
splices in a synthetic mid-air hand close where the grasp began, with the
event-signal label driven to 1 there and through transport.  The grasp set
keeps only the grasp segment with the label 0 everywhere except the final
10 steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..core import Image, joints_from_synergy
from .episodes import RawEpisode
from .imaging import DIFFUSION_INPUT_SIZE, preprocess_vla_images, resize_bilinear

__all__ = [
    "MissingMarkersError",
    "SegmentTooShortError",
    "TrainingSample",
    "segment_for_vla",
    "segment_for_diffusion",
    "DIFFUSION_SIGMA_TAIL",
]

DIFFUSION_SIGMA_TAIL = 10


class MissingMarkersError(ValueError):
    pass


class SegmentTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSample:
    """One supervised step: image(s), proprioception, next-step action, and
    the event-signal label."""

    proprio_arm: Tuple[float, ...]
    proprio_joints: Tuple[float, ...]
    action_arm: Tuple[float, ...]          # next-step pose delta
    action_joints: Tuple[float, ...]       # next-step joint targets
    sigma_label: float
    source_tick: Optional[int]             # None for synthetic close steps
    image: Optional[Image] = None
    image2: Optional[Image] = None


def _delta(a: Tuple[float, ...], b: Tuple[float, ...]) -> Tuple[float, ...]:
    return tuple(float(y - x) for x, y in zip(a, b))


def _window_samples(ep: RawEpisode, start: int, end: int, sigmas,
                    include_images: bool) -> List[TrainingSample]:
    out = []
    for i in range(start, end):
        step = ep.steps[i]
        if i + 1 < end:
            nxt = ep.steps[i + 1]
            action_arm = _delta(step.arm, nxt.arm)
            action_joints = nxt.joints
        else:
            action_arm = (0.0,) * 6
            action_joints = step.joints
        image = None
        if include_images:
            image = preprocess_vla_images(ep.load_frame(step.cam1),
                                          ep.load_frame(step.cam2))
        out.append(TrainingSample(
            proprio_arm=step.arm,
            proprio_joints=step.joints,
            action_arm=action_arm,
            action_joints=action_joints,
            sigma_label=float(sigmas[i - start]),
            source_tick=step.tick,
            image=image,
        ))
    return out


def segment_for_vla(ep: RawEpisode, close_clip_ticks: int = 5,
                    include_images: bool = True) -> List[TrainingSample]:
    """Approach (label 0), synthetic mid-air close (label 1, arm frozen),
    transport (label 1), release (label ramping back to 0); grasp-segment
    steps are excluded entirely."""
    ranges = {name: ep.marker_range(name) for name in
              ("approach", "grasp", "transport", "release")}
    missing = [name for name, r in ranges.items() if r is None]
    if missing:
        raise MissingMarkersError(f"{ep.episode_id}: missing markers {missing}")

    a0, a1 = ranges["approach"]
    t0, t1 = ranges["transport"]
    r0, r1 = ranges["release"]
    samples = _window_samples(ep, a0, a1, [0.0] * (a1 - a0), include_images)

    # Synthetic close: the hand shuts in mid-air at the frozen handoff pose.
    boundary = ep.steps[a1 - 1]
    boundary_image = None
    if include_images:
        boundary_image = preprocess_vla_images(ep.load_frame(boundary.cam1),
                                               ep.load_frame(boundary.cam2))
    for k in range(close_clip_ticks):
        current = joints_from_synergy(k / close_clip_ticks)
        target = joints_from_synergy((k + 1) / close_clip_ticks)
        samples.append(TrainingSample(
            proprio_arm=boundary.arm,
            proprio_joints=tuple(float(v) for v in current),
            action_arm=(0.0,) * 6,
            action_joints=tuple(float(v) for v in target),
            sigma_label=1.0,
            source_tick=None,
            image=boundary_image,
        ))

    samples += _window_samples(ep, t0, t1, [1.0] * (t1 - t0), include_images)
    n_release = r1 - r0
    if n_release == 1:
        release_sigmas = [0.0]
    else:
        release_sigmas = [(n_release - 1 - i) / (n_release - 1) for i in range(n_release)]
    samples += _window_samples(ep, r0, r1, release_sigmas, include_images)
    return samples


def segment_for_diffusion(ep: RawEpisode,
                          include_images: bool = True) -> List[TrainingSample]:
    """Grasp-segment steps only; the label is 0 everywhere except the final
    10 steps of the trial."""
    grasp = ep.marker_range("grasp")
    if grasp is None:
        raise MissingMarkersError(f"{ep.episode_id}: missing grasp marker")
    g0, g1 = grasp
    n = g1 - g0
    if n < DIFFUSION_SIGMA_TAIL:
        raise SegmentTooShortError(
            f"{ep.episode_id}: grasp segment has {n} steps, needs {DIFFUSION_SIGMA_TAIL}")
    sigmas = [0.0] * (n - DIFFUSION_SIGMA_TAIL) + [1.0] * DIFFUSION_SIGMA_TAIL
    out = []
    for i in range(g0, g1):
        step = ep.steps[i]
        if i + 1 < g1:
            nxt = ep.steps[i + 1]
            action_arm = _delta(step.arm, nxt.arm)
            action_joints = nxt.joints
        else:
            action_arm = (0.0,) * 6
            action_joints = step.joints
        image = image2 = None
        if include_images:
            image = resize_bilinear(ep.load_frame(step.cam1), *DIFFUSION_INPUT_SIZE)
            image2 = resize_bilinear(ep.load_frame(step.cam2), *DIFFUSION_INPUT_SIZE)
        out.append(TrainingSample(
            proprio_arm=step.arm,
            proprio_joints=step.joints,
            action_arm=action_arm,
            action_joints=action_joints,
            sigma_label=float(sigmas[i - g0]),
            source_tick=step.tick,
            image=image,
            image2=image2,
        ))
    return out
