"""Dataset validator: every export-rule invariant, checked from disk.

Violations are report content, not exceptions; a fresh generator output
must validate with zero violations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..config import OBJECT_SPECS
from ..core import ObjectKind
from ..policies import attempts_count, classify_grasp_strategy
from .episodes import RawEpisode
from .segment import (
    DIFFUSION_SIGMA_TAIL,
    MissingMarkersError,
    SegmentTooShortError,
    segment_for_diffusion,
    segment_for_vla,
)

__all__ = ["Violation", "ValidationReport", "validate_dataset"]


@dataclass(frozen=True)
class Violation:
    episode: str
    rule: str
    detail: str
    step: Optional[int] = None

    def __str__(self):
        loc = f" step {self.step}" if self.step is not None else ""
        return f"[{self.rule}] {self.episode}{loc}: {self.detail}"


@dataclass
class ValidationReport:
    dataset: str
    episodes_checked: int = 0
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, episode: str, rule: str, detail: str, step: Optional[int] = None):
        self.violations.append(Violation(episode, rule, detail, step))

    def summary(self) -> str:
        status = "OK" if self.ok else f"{len(self.violations)} violation(s)"
        lines = [f"dataset {self.dataset}: {self.episodes_checked} episodes, {status}"]
        lines += [str(v) for v in self.violations]
        return "\n".join(lines)


def _ppm_header_dims(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(64)
    if not head.startswith(b"P6"):
        return None
    tokens = head[2:].split()
    if len(tokens) < 2:
        return None
    return int(tokens[0]), int(tokens[1])


def validate_dataset(dataset_dir: Union[str, Path],
                     verify_hashes: bool = True) -> ValidationReport:
    root = Path(dataset_dir)
    report = ValidationReport(dataset=str(root))
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        report.add("-", "manifest", "manifest.json missing")
        return report
    manifest = json.loads(manifest_path.read_text())

    listed = {e["id"]: e for e in manifest.get("episodes", [])}
    on_disk = {p.name for p in (root / "episodes").iterdir() if p.is_dir()} \
        if (root / "episodes").exists() else set()
    for missing in sorted(set(listed) - on_disk):
        report.add(missing, "count", "episode listed in manifest but missing on disk")
    for extra in sorted(on_disk - set(listed)):
        report.add(extra, "count", "episode on disk but not in manifest")

    # Manifest counts must match the plan exactly.
    plan = manifest.get("plan", {})
    counts = manifest.get("counts", {})
    for combo, expected in (counts.get("vla") or {}).items():
        if expected != plan.get("vla_trials_per_combo"):
            report.add(combo, "count",
                       f"manifest lists {expected} trials, plan wants "
                       f"{plan.get('vla_trials_per_combo')}")
        actual = sum(1 for e in listed.values()
                     if e["set"] == "vla" and f"{e['object']}/{e['plate']}" == combo)
        if actual != expected:
            report.add(combo, "count", f"{actual} vla episodes, expected {expected}")
    for obj, expected in (plan.get("diffusion_trials") or {}).items():
        actual = sum(1 for e in listed.values()
                     if e["set"] == "diffusion" and e["object"] == obj)
        if actual != expected:
            report.add(obj, "count", f"{actual} diffusion episodes, expected {expected}")

    recovery_ok: dict = {}
    strategies: dict = {}
    for episode_id in sorted(set(listed) & on_disk):
        try:
            ep = RawEpisode.load(root / "episodes" / episode_id)
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            report.add(episode_id, "format", str(exc))
            continue
        report.episodes_checked += 1
        _check_episode(ep, report)
        if ep.set_name == "diffusion":
            hist_arm = [s.arm for s in ep.steps]
            hist_joints = [np.array(s.joints) for s in ep.steps]
            strategies.setdefault(ep.object_kind, set()).add(
                classify_grasp_strategy(hist_arm, hist_joints))
            if ep.forced_recovery and attempts_count(hist_joints) >= 2:
                recovery_ok[ep.object_kind] = recovery_ok.get(ep.object_kind, 0) + 1
        if verify_hashes:
            actual = ep.content_hash()
            if actual != listed[episode_id]["sha256"]:
                report.add(episode_id, "hash", "content hash mismatch with manifest")

    for obj in (plan.get("diffusion_trials") or {}):
        if recovery_ok.get(obj, 0) < 2:
            report.add(obj, "recovery",
                       f"only {recovery_ok.get(obj, 0)} valid fail-and-recover "
                       "demonstrations, need at least 2")
        if OBJECT_SPECS[ObjectKind(obj)].thin and \
                strategies.get(obj, set()) != {"direct_pick", "slide_and_pick"}:
            report.add(obj, "strategy-mix",
                       f"grasp strategies {sorted(strategies.get(obj, set()))}, "
                       "need both")
    return report


def _check_episode(ep: RawEpisode, report: ValidationReport) -> None:
    for i, step in enumerate(ep.steps):
        if step.tick != i:
            report.add(ep.episode_id, "steps", f"tick {step.tick} at row {i}", step=i)
            break
    ones = [i for i, s in enumerate(ep.steps) if s.sigma_operator == 1]
    if ones and ones != list(range(ones[0], ones[-1] + 1)):
        report.add(ep.episode_id, "sigma-operator",
                   "event button trace is not a single contiguous press")

    assert ep.root is not None
    for i, step in enumerate(ep.steps):
        for rel in (step.cam1, step.cam2):
            path = ep.root / rel
            if not path.exists():
                report.add(ep.episode_id, "frames", f"{rel} missing", step=i)
            else:
                dims = _ppm_header_dims(path)
                if dims != ep.camera:
                    report.add(ep.episode_id, "frames",
                               f"{rel} is {dims}, camera is {ep.camera}", step=i)

    if ep.set_name == "vla":
        _check_vla_episode(ep, report)
    elif ep.set_name == "diffusion":
        _check_diffusion_episode(ep, report)
    else:
        report.add(ep.episode_id, "format", f"unknown set {ep.set_name!r}")


def _check_vla_episode(ep: RawEpisode, report: ValidationReport) -> None:
    grasp = ep.marker_range("grasp")
    release = ep.marker_range("release")
    if grasp is None or release is None or ep.marker_range("approach") is None \
            or ep.marker_range("transport") is None:
        report.add(ep.episode_id, "markers", "missing task-segment markers")
        return
    for i, step in enumerate(ep.steps):
        expected = int(grasp[0] <= i < release[0])
        if step.sigma_operator != expected:
            report.add(ep.episode_id, "sigma-operator",
                       f"button {step.sigma_operator}, expected {expected}", step=i)
            break

    # Export rule: the approach/transport set must exclude every grasp tick
    # and carry the documented label envelope.
    try:
        samples = segment_for_vla(ep, include_images=False)
    except MissingMarkersError as exc:
        report.add(ep.episode_id, "vla-export", str(exc))
        return
    grasp_ticks = set(range(*grasp))
    for s in samples:
        if s.source_tick is not None and s.source_tick in grasp_ticks:
            report.add(ep.episode_id, "vla-export",
                       f"grasp tick {s.source_tick} leaked into the export",
                       step=s.source_tick)
        if s.source_tick is None and s.sigma_label != 1.0:
            report.add(ep.episode_id, "vla-export", "synthetic close step not labeled 1")
        if s.source_tick is not None and grasp[1] <= s.source_tick < release[0] \
                and s.sigma_label != 1.0:
            report.add(ep.episode_id, "vla-export",
                       f"transport tick {s.source_tick} labeled {s.sigma_label}",
                       step=s.source_tick)
    release_sigmas = [s.sigma_label for s in samples
                      if s.source_tick is not None and s.source_tick >= release[0]]
    if release_sigmas and (release_sigmas[-1] != 0.0 or
                           any(b > a for a, b in zip(release_sigmas, release_sigmas[1:]))):
        report.add(ep.episode_id, "vla-export", "release labels do not ramp to 0")


def _check_diffusion_episode(ep: RawEpisode, report: ValidationReport) -> None:
    if ep.start_clearance is not None:
        expected_z = OBJECT_SPECS[ObjectKind(ep.object_kind)].height + ep.start_clearance
        if abs(ep.steps[0].arm[2] - expected_z) > 0.012:
            report.add(ep.episode_id, "start-pose",
                       f"first step z {ep.steps[0].arm[2]:.3f}, expected about "
                       f"{expected_z:.3f}", step=0)
    try:
        samples = segment_for_diffusion(ep, include_images=False)
    except (MissingMarkersError, SegmentTooShortError) as exc:
        report.add(ep.episode_id, "diffusion-export", str(exc))
        return
    n = len(samples)
    tail = min(DIFFUSION_SIGMA_TAIL, n)
    for i, s in enumerate(samples):
        expected = 1.0 if i >= n - tail else 0.0
        if s.sigma_label != expected:
            report.add(ep.episode_id, "diffusion-export",
                       f"label {s.sigma_label} at sample {i}, expected {expected}",
                       step=s.source_tick)
            break
