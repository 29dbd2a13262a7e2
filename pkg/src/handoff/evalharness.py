"""Experiment runners reproducing the evaluation protocols.

Five experiments: reach offset at the approach handoff, grasp success vs.
start offset, grasp strategy vs. edge distance, forced-failure recovery,
and the end-to-end pick-and-place suite in hybrid and baseline modes.
Every run is reproducible from (config, seed): per-trial seeds are derived
streams and the CSV/report bytes are stable across runs.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .config import GraspStubConfig, SceneConfig, VlaStubConfig
from .core import Instruction, ObjectKind, PlateColor, format_instruction
from .orchestrator import (
    MachineMode,
    PhaseMachine,
    TaskPhase,
    run_episode,
)
from .policies import (
    GraspReferencePolicy,
    attempts_count,
    make_policy_set,
    run_grasp_trial,
)
from .sim import PickPlaceEnv

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "run_reach_offset",
    "run_offset_sweep",
    "run_multimodal",
    "run_recovery",
    "run_end_to_end",
    "run_experiment",
    "wilson_interval",
    "non_increasing_guard",
    "EXPERIMENTS",
]

EXPERIMENTS = ("reach_offset", "offset_sweep", "multimodal", "recovery",
               "end_to_end", "baseline")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "end_to_end"
    episodes_per_cell: int = 30
    trials_per_cell: int = 200
    offsets: Tuple[float, ...] = (0.05, 0.10, 0.15)
    edge_distances: Tuple[float, ...] = (0.01, 0.02, 0.04, 0.06, 0.08, 0.12)
    seed: int = 2024
    camera_mode: str = "both"          # reach offset: "dual" | "single" | "both"
    paper_mode: bool = False           # 5 repeats per cell, protocol fidelity

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(path)
        section = cp["experiment"] if cp.has_section("experiment") else cp["DEFAULT"]
        kwargs = {}
        for key in ("experiment", "camera_mode"):
            if section.get(key):
                kwargs[key] = section.get(key)
        for key in ("episodes_per_cell", "trials_per_cell", "seed"):
            if section.get(key):
                kwargs[key] = section.getint(key)
        if section.get("paper_mode"):
            kwargs["paper_mode"] = section.getboolean("paper_mode")
        for key in ("offsets", "edge_distances"):
            if section.get(key):
                kwargs[key] = tuple(float(v) for v in section.get(key).split(","))
        return cls(**kwargs)

    def cell_count(self, default: int) -> int:
        return 5 if self.paper_mode else default


@dataclass
class ExperimentResult:
    name: str
    columns: Sequence[str]
    rows: List[dict]
    summary: Dict[str, object]
    traces: List[Tuple[str, str]] = field(default_factory=list)  # (relpath, text)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.columns),
                                lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    def report_text(self) -> str:
        lines = [f"# {self.name}", ""]
        for key in sorted(self.summary):
            lines.append(f"- {key}: {self.summary[key]}")
        lines.append("")
        return "\n".join(lines)

    def write(self, out_dir: Union[str, Path]) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.csv_text())
        (out / "report.md").write_text(self.report_text())
        if self.traces:
            traces = out / "traces"
            traces.mkdir(exist_ok=True)
            for rel, text in self.traces:
                (traces / rel).write_text(text)
        return out


def _trial_seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence([base, *path]).generate_state(1)[0])


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> Tuple[float, float]:
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def non_increasing_guard(cells: Sequence[Tuple[int, int]], alpha: float = 0.01) -> bool:
    """True unless some adjacent cell shows a statistically significant
    increase (one-sided Fisher exact at alpha)."""
    for (n_a, k_a), (n_b, k_b) in zip(cells, cells[1:]):
        table = [[k_b, n_b - k_b], [k_a, n_a - k_a]]
        _, p = stats.fisher_exact(table, alternative="greater")
        if p < alpha:
            return False
    return True


# ---------------------------------------------------------------------------
# Reach offset
# ---------------------------------------------------------------------------

def run_reach_offset(cfg: ExperimentConfig,
                     scene: Optional[SceneConfig] = None) -> ExperimentResult:
    """Planar hand-to-target offset at the tick the approach policy's rising
    edge fires, per camera mode, objects placed at random."""
    scene = scene or SceneConfig()
    modes = ("dual", "single") if cfg.camera_mode == "both" else (cfg.camera_mode,)
    objects = (ObjectKind.PEPPER, ObjectKind.TAPE)
    n = cfg.cell_count(cfg.trials_per_cell)
    rows = []
    for mode_idx, mode in enumerate(modes):
        for i in range(n):
            kind = objects[i % len(objects)]
            plate = PlateColor.YELLOW if i % 4 < 2 else PlateColor.PURPLE
            instruction = Instruction(
                format_instruction(Instruction("", kind, plate)), kind, plate)
            seed = _trial_seed(cfg.seed, 10, mode_idx, i)
            env = PickPlaceEnv(scene)
            policies = make_policy_set(instruction, scene, seed,
                                       vla_cfg=VlaStubConfig(camera_mode=mode))
            machine = PhaseMachine()
            result = run_episode(env, policies, machine, instruction, seed,
                                 stop_after_grasp_entry=True)
            target = env.world.object_by_name(kind.value)
            hand = env.world.hand
            offset = math.hypot(hand.x - target.x, hand.y - target.y)
            rows.append({
                "camera_mode": mode,
                "object": kind.value,
                "episode": i,
                "seed": seed,
                "edge_fired": int(result.final_phase is not TaskPhase.FAILURE),
                "offset_m": repr(offset),
                "dx_m": repr(hand.x - target.x),
                "dy_m": repr(hand.y - target.y),
            })
    summary = {}
    for mode in modes:
        offsets = [float(r["offset_m"]) for r in rows if r["camera_mode"] == mode]
        summary[f"{mode}.mean_m"] = float(np.mean(offsets))
        summary[f"{mode}.max_m"] = float(np.max(offsets))
        summary[f"{mode}.p95_m"] = float(np.quantile(offsets, 0.95))
        summary[f"{mode}.samples"] = len(offsets)
    return ExperimentResult(
        name="reach_offset",
        columns=["camera_mode", "object", "episode", "seed", "edge_fired",
                 "offset_m", "dx_m", "dy_m"],
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Offset sweep
# ---------------------------------------------------------------------------

def run_offset_sweep(cfg: ExperimentConfig,
                     scene: Optional[SceneConfig] = None) -> ExperimentResult:
    """Single-attempt grasp success when the hand starts displaced by each
    planar offset (recovery disabled, object away from the edge)."""
    scene = scene or SceneConfig()
    objects = (ObjectKind.PEPPER, ObjectKind.TAPE)
    n = cfg.cell_count(cfg.trials_per_cell)
    rows = []
    grasp_cfg = GraspStubConfig(recovery_enabled=False)
    for obj_idx, kind in enumerate(objects):
        for off_idx, offset in enumerate(cfg.offsets):
            successes = 0
            for i in range(n):
                seed = _trial_seed(cfg.seed, 20, obj_idx, off_idx, i)
                rng = np.random.default_rng(seed)
                position = (rng.uniform(-0.10, 0.10), rng.uniform(0.20, 0.30))
                angle = rng.uniform(0, 2 * math.pi)
                start = (offset * math.cos(angle), offset * math.sin(angle))
                env = PickPlaceEnv(scene)
                policy = GraspReferencePolicy(kind, grasp_cfg, scene,
                                              np.random.default_rng(seed + 1))
                trial = run_grasp_trial(env, policy, kind, seed=seed,
                                        position=position, start_offset=start)
                successes += trial.success
            lo, hi = wilson_interval(successes, n)
            rows.append({
                "object": kind.value,
                "offset_m": offset,
                "trials": n,
                "successes": successes,
                "success_rate": repr(successes / n),
                "ci_low": repr(lo),
                "ci_high": repr(hi),
            })
    summary = {}
    for kind in objects:
        cells = [(r["trials"], r["successes"]) for r in rows
                 if r["object"] == kind.value]
        summary[f"{kind.value}.monotone_non_increasing"] = non_increasing_guard(cells)
        for r in rows:
            if r["object"] == kind.value:
                summary[f"{kind.value}.rate@{r['offset_m']}"] = float(r["success_rate"])
    return ExperimentResult(
        name="offset_sweep",
        columns=["object", "offset_m", "trials", "successes", "success_rate",
                 "ci_low", "ci_high"],
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Multi-modal strategy selection
# ---------------------------------------------------------------------------

def run_multimodal(cfg: ExperimentConfig,
                   scene: Optional[SceneConfig] = None) -> ExperimentResult:
    """Slide-and-pick fraction and grasp success per edge distance, with
    recovery on; the strategy is classified from the hand trace, not from
    policy self-report."""
    scene = scene or SceneConfig()
    objects = (ObjectKind.TAPE, ObjectKind.BLOCK)
    n = cfg.cell_count(cfg.trials_per_cell)
    rows = []
    for obj_idx, kind in enumerate(objects):
        for d_idx, d in enumerate(cfg.edge_distances):
            slides = 0
            successes = 0
            for i in range(n):
                seed = _trial_seed(cfg.seed, 30, obj_idx, d_idx, i)
                rng = np.random.default_rng(seed)
                position = (rng.uniform(-0.08, 0.08), d)
                env = PickPlaceEnv(scene)
                policy = GraspReferencePolicy(kind, GraspStubConfig(), scene,
                                              np.random.default_rng(seed + 1))
                trial = run_grasp_trial(env, policy, kind, seed=seed,
                                        position=position)
                slides += trial.strategy == "slide_and_pick"
                successes += trial.success
            rows.append({
                "object": kind.value,
                "edge_distance_m": d,
                "trials": n,
                "slides": slides,
                "slide_fraction": repr(slides / n),
                "successes": successes,
                "success_rate": repr(successes / n),
            })
    summary = {}
    for kind in objects:
        cells = [(r["trials"], r["slides"]) for r in rows if r["object"] == kind.value]
        summary[f"{kind.value}.monotone_non_increasing"] = non_increasing_guard(cells)
        summary[f"{kind.value}.all_cells_success"] = all(
            r["successes"] == r["trials"] for r in rows if r["object"] == kind.value)
    return ExperimentResult(
        name="multimodal",
        columns=["object", "edge_distance_m", "trials", "slides", "slide_fraction",
                 "successes", "success_rate"],
        rows=rows,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------

def run_recovery(cfg: ExperimentConfig,
                 scene: Optional[SceneConfig] = None) -> ExperimentResult:
    """Full episodes with a deliberately failed first grasp attempt: the
    event signal must stay at zero through the failed attempt, a retry must
    happen, and the episode must still end in Done."""
    scene = scene or SceneConfig()
    kind = ObjectKind.PAPER
    n = cfg.cell_count(cfg.episodes_per_cell)
    grasp_cfg = GraspStubConfig(force_first_attempt_failure=True)
    rows = []
    traces = []
    for i in range(n):
        seed = _trial_seed(cfg.seed, 40, i)
        instruction = Instruction(
            format_instruction(Instruction("", kind, PlateColor.YELLOW)),
            kind, PlateColor.YELLOW)
        env = PickPlaceEnv(scene)
        policies = make_policy_set(instruction, scene, seed, grasp_cfg=grasp_cfg)
        machine = PhaseMachine()
        result = run_episode(env, policies, machine, instruction, seed)
        grasp_records = [r for r in result.trace if r.phase == "grasping"]
        attempts = attempts_count([r.joints for r in result.trace])
        nonzero = [idx for idx, r in enumerate(grasp_records) if r.sigma_grasp > 0]
        sigma_ok = all(r.sigma_grasp == 0.0
                       for r in grasp_records[:nonzero[0]]) if nonzero else False
        rows.append({
            "trial": i,
            "seed": seed,
            "attempts": attempts,
            "sigma_trace_ok": int(sigma_ok),
            "final_phase": result.final_phase.value,
            "score": result.score.value,
        })
        traces.append((f"recovery_{i:03d}.jsonl", result.trace_jsonl()))
    summary = {
        "trials": n,
        "all_recovered": all(r["attempts"] >= 2 for r in rows),
        "all_sigma_ok": all(r["sigma_trace_ok"] for r in rows),
        "all_done": all(r["final_phase"] == "done" for r in rows),
        "mean_attempts": float(np.mean([r["attempts"] for r in rows])),
    }
    return ExperimentResult(
        name="recovery",
        columns=["trial", "seed", "attempts", "sigma_trace_ok", "final_phase", "score"],
        rows=rows,
        summary=summary,
        traces=traces,
    )


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def run_end_to_end(cfg: ExperimentConfig, scene: Optional[SceneConfig] = None,
                   baseline: bool = False) -> ExperimentResult:
    """The full pick-and-place suite over all six (object, plate) cells."""
    scene = scene or SceneConfig()
    mode_name = "baseline" if baseline else "hybrid"
    n = cfg.cell_count(cfg.episodes_per_cell)
    rows = []
    traces = []
    cell_means = {}
    combos = [(o, p) for o in (ObjectKind.PEPPER, ObjectKind.TAPE, ObjectKind.PAPER)
              for p in (PlateColor.YELLOW, PlateColor.PURPLE)]
    for cell_idx, (kind, plate) in enumerate(combos):
        instruction = Instruction(
            format_instruction(Instruction("", kind, plate)), kind, plate)
        scores = []
        for i in range(n):
            seed = _trial_seed(cfg.seed, 50 if not baseline else 51, cell_idx, i)
            env = PickPlaceEnv(scene)
            policies = make_policy_set(instruction, scene, seed, baseline=baseline)
            machine = PhaseMachine(
                mode=MachineMode.VLA_ONLY_BASELINE if baseline else MachineMode.HYBRID)
            result = run_episode(env, policies, machine, instruction, seed)
            scores.append(result.score.value)
            rows.append({
                "mode": mode_name,
                "object": kind.value,
                "plate": plate.value,
                "episode": i,
                "seed": seed,
                "score": result.score.value,
                "reason": result.score.reason.value,
                "final_phase": result.final_phase.value,
                "ticks": len(result.trace),
            })
            if i == 0:
                traces.append(
                    (f"{mode_name}_{kind.value}_{plate.value}_{i:03d}.jsonl",
                     result.trace_jsonl()))
        cell_means[f"{kind.value}/{plate.value}"] = float(np.mean(scores))
    summary = {"mode": mode_name, "episodes_per_cell": n}
    for cell, mean in sorted(cell_means.items()):
        summary[f"mean.{cell}"] = mean
    summary["min_cell_mean"] = min(cell_means.values())
    return ExperimentResult(
        name=f"end_to_end_{mode_name}",
        columns=["mode", "object", "plate", "episode", "seed", "score", "reason",
                 "final_phase", "ticks"],
        rows=rows,
        summary=summary,
        traces=traces,
    )


def run_experiment(name: str, cfg: ExperimentConfig,
                   scene: Optional[SceneConfig] = None) -> ExperimentResult:
    name = name.replace("-", "_")
    if name == "reach_offset":
        return run_reach_offset(cfg, scene)
    if name == "offset_sweep":
        return run_offset_sweep(cfg, scene)
    if name == "multimodal":
        return run_multimodal(cfg, scene)
    if name == "recovery":
        return run_recovery(cfg, scene)
    if name == "end_to_end":
        return run_end_to_end(cfg, scene, baseline=False)
    if name == "baseline":
        return run_end_to_end(cfg, scene, baseline=True)
    raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
