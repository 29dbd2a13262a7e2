"""Write training sets to disk as samples.jsonl plus preprocessed frames."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

from ..core import write_ppm
from .episodes import RawEpisode
from .segment import segment_for_diffusion, segment_for_vla

__all__ = ["export_vla", "export_diffusion"]


def _iter_episodes(dataset_dir: Path, set_name: str):
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    for entry in manifest["episodes"]:
        if entry["set"] == set_name:
            yield RawEpisode.load(dataset_dir / "episodes" / entry["id"])


def _sample_row(ep, idx, sample, image_paths):
    return json.dumps({
        "episode": ep.episode_id,
        "index": idx,
        "source_tick": sample.source_tick,
        "synthetic": sample.source_tick is None,
        "sigma": sample.sigma_label,
        "proprio_arm": list(sample.proprio_arm),
        "proprio_joints": list(sample.proprio_joints),
        "action_arm": list(sample.action_arm),
        "action_joints": list(sample.action_joints),
        "image": image_paths[0],
        "image2": image_paths[1],
    }, separators=(",", ":"))


def _write_samples(episodes, segmenter, out: Path, include_images: bool) -> int:
    out.mkdir(parents=True, exist_ok=True)
    if include_images:
        (out / "images").mkdir(exist_ok=True)
    count = 0
    with open(out / "samples.jsonl", "w") as fh:
        for ep in episodes:
            for idx, sample in enumerate(segmenter(ep, include_images=include_images)):
                paths = [None, None]
                for slot, img in enumerate((sample.image, sample.image2)):
                    if img is not None:
                        rel = f"images/{ep.episode_id}_{idx:04d}_{slot}.ppm"
                        write_ppm(img, out / rel)
                        paths[slot] = rel
                fh.write(_sample_row(ep, idx, sample, paths) + "\n")
                count += 1
    return count


def export_vla(dataset_dir: Union[str, Path], out_dir: Union[str, Path],
               include_images: bool = True) -> int:
    """Export the approach/transport set; returns the sample count."""
    dataset_dir = Path(dataset_dir)
    return _write_samples(_iter_episodes(dataset_dir, "vla"), segment_for_vla,
                          Path(out_dir) / "vla", include_images)


def export_diffusion(dataset_dir: Union[str, Path], out_dir: Union[str, Path],
                     include_images: bool = True) -> dict:
    """Export one grasp training set per object; returns counts by object."""
    dataset_dir = Path(dataset_dir)
    by_object: dict = {}
    for ep in _iter_episodes(dataset_dir, "diffusion"):
        by_object.setdefault(ep.object_kind, []).append(ep)
    counts = {}
    for obj, episodes in sorted(by_object.items()):
        counts[obj] = _write_samples(episodes, segment_for_diffusion,
                                     Path(out_dir) / "diffusion" / obj, include_images)
    return counts
