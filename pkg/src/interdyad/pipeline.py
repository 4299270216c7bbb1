"""File-level pipeline stages behind the command line."""

from __future__ import annotations

import logging
import platform
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, io
from .alignment import AlignmentBatch, linear_task, train_connector
from .flow import SamplerConfig, chunk_starts, multi_clip_generate, oracle_velocity
from .guidance import GuidanceConfig, scene_fields
from .metrics import (
    DEFAULT_DELTA,
    LandmarkTrack,
    SegmentSet,
    di_sali,
    di_sync,
    frames_to_segments,
    onset_segments,
    eye_displacement,
)
from .scene import DyadicScene, SceneConfig, extract_motion_latent, generate_scene, save_scene

log = logging.getLogger(__name__)

REACTION_THRESHOLD = 0.8  # px per frame of mean eye motion


class Manifest:
    """Run manifest, written next to the artefacts once they exist."""

    def __init__(self, command: str, config: dict, seed: int | None, inputs: dict):
        self.data: dict[str, Any] = {
            "command": command,
            "config": config,
            "seed": seed,
            "inputs": inputs,
            "outputs": [],
            "tool_version": __version__,
            "python": platform.python_version(),
        }
        self._t0 = time.time()

    def add_output(self, name: str | Path) -> None:
        self.data["outputs"].append(str(name))

    def write(self, path: str | Path) -> None:
        self.data["wall_clock"] = {"started": self._t0, "elapsed_s": time.time() - self._t0}
        io.write_json(path, self.data)


# --- metrics ---------------------------------------------------------------


def eye_tracks(scene: DyadicScene) -> tuple[LandmarkTrack, LandmarkTrack]:
    eyes = scene.layout["eyes"]
    return tuple(LandmarkTrack(p.landmarks[:, eyes], scene.fps) for p in scene.persons)


def scene_segments(scene: DyadicScene, threshold: float = REACTION_THRESHOLD) -> tuple[SegmentSet, SegmentSet]:
    """Audio emphasis = speech onsets of either person; video = listener motion bursts."""
    fps = scene.fps
    audio = SegmentSet.of(
        iv for p in scene.persons for iv in onset_segments(p.vad, fps).intervals
    )
    video_iv = []
    for p, track in zip(scene.persons, eye_tracks(scene)):
        steps = np.concatenate([[0.0], eye_displacement(track)])
        reacting = (steps > threshold) & ~p.vad
        video_iv.extend(frames_to_segments(reacting, fps).intervals)
    return audio, SegmentSet.of(video_iv)


def evaluate_clip(
    clip_id: str, audio: SegmentSet, video: SegmentSet, delta: float, scene: DyadicScene | None, normalize: bool = False
) -> dict:
    row = {"clip_id": clip_id, "di_sync": di_sync(audio, video, delta), "di_sali": None}
    if scene is not None:
        row["di_sali"] = di_sali(*eye_tracks(scene), normalize=normalize)
    return row


def aggregate(rows: Sequence[dict]) -> dict:
    out: dict[str, Any] = {"count": len(rows), "mean": {}}
    for key in ("di_sync", "di_sali"):
        vals = [r[key] for r in rows if r[key] is not None]
        out["mean"][key] = float(np.mean(vals)) if vals else None
    return out


def write_report(csv_path: Path, rows: Sequence[dict]) -> Path:
    rows = sorted(rows, key=lambda r: r["clip_id"])
    io.write_csv(csv_path, ["clip_id", "di_sync", "di_sali"], [[r["clip_id"], r["di_sync"], "" if r["di_sali"] is None else r["di_sali"]] for r in rows])
    agg_path = csv_path.with_name(csv_path.stem + "_aggregate.json")
    io.write_json(agg_path, aggregate(rows))
    return agg_path


def parse_segment_records(obj: Any) -> list[dict]:
    records = obj if isinstance(obj, list) else [obj]
    out = []
    for r in records:
        try:
            out.append(
                {
                    "clip_id": str(r["clip_id"]),
                    "audio": SegmentSet.of(r["audio_segments"]),
                    "video": SegmentSet.of(r["video_segments"]),
                    "scene": r.get("scene"),
                }
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"malformed segment record: {exc}") from exc
    return out


# --- guidance dump ---------------------------------------------------------


def dump_guidance(scene: DyadicScene, cfg: GuidanceConfig, out: Path) -> list[str]:
    timeline, fields = scene_fields(scene, cfg)
    io.write_latent(out / "cfg_fields.idlt", fields[None])
    names = {0: "none", 1: "1", 2: "2"}
    io.write_csv(
        out / "roles.csv",
        ["frame", "speaker_id", "alpha"],
        [[t, names[int(s)], float(a)] for t, (s, a) in enumerate(zip(timeline.speaker_id, timeline.alpha))],
    )
    return ["cfg_fields.idlt", "roles.csv"]


# --- alignment data ----------------------------------------------------------


def write_alignment_data(out: Path, batches: Sequence[AlignmentBatch], fps: float = 25.0) -> None:
    n, d = batches[0].hidden.shape
    d_m = batches[0].target.shape[1]
    entries = []
    for i, b in enumerate(batches):
        io.write_latent(out / f"hidden_{i:03d}.idlt", b.hidden)
        io.write_latent(out / f"target_{i:03d}.idlt", b.target)
        entries.append({"hidden": f"hidden_{i:03d}.idlt", "target": f"target_{i:03d}.idlt"})
    io.write_json(out / "manifest.json", {"N": n, "D": d, "D_m": d_m, "fps": fps, "batches": entries})


def read_alignment_data(data: Path) -> list[AlignmentBatch]:
    man = io.read_json(data / "manifest.json")
    batches = []
    for e in man["batches"]:
        h = io.read_latent(data / e["hidden"]).reshape(man["N"], man["D"])
        m = io.read_latent(data / e["target"]).reshape(man["N"], man["D_m"])
        batches.append(AlignmentBatch(h, m))
    if not batches:
        raise ValueError(f"no batches listed in {data / 'manifest.json'}")
    return batches


def train_alignment(data: Path, out: Path, steps: int, lr: float, seed: int) -> list[str]:
    batches = read_alignment_data(data)
    result = train_connector(batches, steps, lr, seed=seed)
    io.write_csv(out / "loss.csv", ["step", "loss"], enumerate(result.losses))
    io.write_npz(out / "connector_params.npz", result.params.arrays())
    log.info("trained %d steps: loss %.6g -> %.6g", steps, result.losses[0], result.losses[-1])
    return ["loss.csv", "connector_params.npz"]


# --- demo --------------------------------------------------------------------


def run_demo(seed: int, out: Path, frames: int = 153, sampler: SamplerConfig | None = None) -> dict:
    """Scene -> motion latents -> anchored multi-clip sample -> guidance -> metrics."""
    sampler = sampler or SamplerConfig()
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scene_seed, latent_seed = (int(x) for x in rng.integers(0, 2**31, size=2))
    scene = generate_scene(scene_seed, SceneConfig(frames=frames))
    save_scene(out / "scene.json", scene)
    files = ["scene.json"]

    motion = {}
    for k in (1, 2):
        m = extract_motion_latent(scene, k, lips_masked=True)
        motion[k] = m.vectors
        io.write_latent(out / f"motion_p{k}.idlt", m.vectors)
        files.append(f"motion_p{k}.idlt")

    c, t, h, w = scene.latent_dims
    starts = chunk_starts(frames, sampler)
    padded = starts[-1] + sampler.chunk_frames
    lrng = np.random.default_rng(latent_seed)
    z0 = lrng.normal(size=(c, frames, h, w))
    noise = lrng.normal(size=(c, padded, h, w))
    anchors = {"reference": z0[:, 0], "motion": motion}
    sample, chunks = multi_clip_generate(oracle_velocity(z0), frames, sampler, anchors, noise, return_chunks=True)
    io.write_latent(out / "sample.idlt", sample)
    files.append("sample.idlt")

    ctx = sampler.context_frames
    boundaries = []
    for i in range(1, len(chunks)):
        prev, cur = chunks[i - 1], chunks[i]
        boundaries.append(
            {
                "chunk": i,
                "start": starts[i],
                "context_bit_equal": bool(np.array_equal(prev[:, -ctx:], cur[:, :ctx])),
            }
        )
    oracle_err = float(np.max(np.abs(sample - z0)))

    files += dump_guidance(scene, GuidanceConfig(), out)

    audio, video = scene_segments(scene)
    io.write_json(
        out / "segments.json",
        {"clip_id": f"demo-{seed}", "audio_segments": audio.to_list(), "video_segments": video.to_list()},
    )
    row = evaluate_clip(f"demo-{seed}", audio, video, DEFAULT_DELTA, scene)
    agg = write_report(out / "report.csv", [row])
    files += ["segments.json", "report.csv", agg.name]

    summary = {
        "frames": frames,
        "sampler": asdict(sampler),
        "chunk_starts": starts,
        "boundaries": boundaries,
        "max_abs_error_vs_oracle": oracle_err,
        "metrics": row,
    }
    io.write_json(out / "summary.json", summary)
    files.append("summary.json")
    summary["files"] = files
    return summary
