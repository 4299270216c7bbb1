"""Synthetic dyadic scenes and the stand-in motion encoder.

Landmark layout (per person, per frame, ``L x 2`` pixel coordinates):

* indices 0-3: eyes (0, 1 left eye; 2, 3 right eye)
* indices 4-7: mouth (4 left corner, 5 right corner, 6 upper lip, 7 lower lip)
* indices 8-11: head outline (left, right, top, chin)

Region boxes are given in latent-grid cells as half-open ``[x0, y0, x1, y1)``.
One latent frame is produced per video frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io

EYE_INDICES = (0, 1, 2, 3)
MOUTH_INDICES = (4, 5, 6, 7)
OUTLINE_INDICES = (8, 9, 10, 11)
NON_MOUTH_INDICES = EYE_INDICES + OUTLINE_INDICES
LANDMARK_LAYOUT = {
    "eyes": list(EYE_INDICES),
    "mouth": list(MOUTH_INDICES),
    "outline": list(OUTLINE_INDICES),
}

# Neutral face template, pixels relative to the face centre.
_TEMPLATE = np.array(
    [
        [-19.0, -10.0], [-11.0, -10.0], [11.0, -10.0], [19.0, -10.0],
        [-9.0, 22.0], [9.0, 22.0], [0.0, 19.0], [0.0, 25.0],
        [-30.0, 0.0], [30.0, 0.0], [0.0, -35.0], [0.0, 40.0],
    ]
)

# Size of the non-padding part of a motion latent: pose (3), eyes (8), mouth (3).
MOTION_FEATURES = 3 + 2 * len(EYE_INDICES) + 3


class ConfigError(ValueError):
    """Invalid scene or sampler configuration."""


@dataclass(frozen=True)
class SceneConfig:
    frames: int = 50
    fps: int = 25
    canvas: tuple[int, int] = (640, 320)  # (w, h) pixels
    grid: tuple[int, int] = (20, 40)  # latent (H, W)
    channels: int = 4
    boxes: tuple[tuple[int, int, int, int], ...] = ((1, 1, 19, 20), (21, 1, 39, 20))
    head_amplitude: tuple[float, float] = (4.0, 3.0)  # px, per person
    eye_amplitude: tuple[float, float] = (1.5, 1.0)
    rotation_amplitude: float = 0.05  # rad
    nod_amplitude: float = 6.0  # px
    nod_seconds: float = 0.4
    reaction_latency: float = 0.5  # s, listener nod after partner's turn onset
    turn_seconds: tuple[float, float] = (0.8, 2.4)
    backchannel_prob: float = 0.3


@dataclass
class Person:
    landmarks: np.ndarray  # (T, L, 2)
    lip_center: np.ndarray  # (T, 2)
    vad: np.ndarray  # (T,) bool
    region_box: tuple[int, int, int, int]
    region_mask: np.ndarray  # (H, W) bool


@dataclass
class DyadicScene:
    fps: int
    frames: int
    canvas: tuple[int, int]
    persons: list[Person]
    latent_dims: tuple[int, int, int, int]
    layout: dict = field(default_factory=lambda: dict(LANDMARK_LAYOUT))

    @property
    def grid(self) -> tuple[int, int]:
        return self.latent_dims[2], self.latent_dims[3]

    @property
    def cell_size(self) -> tuple[float, float]:
        """Pixels per latent cell along (x, y)."""
        h, w = self.grid
        return self.canvas[0] / w, self.canvas[1] / h

    def person(self, person_id: int) -> Person:
        if person_id not in (1, 2):
            raise ValueError(f"person_id must be 1 or 2, got {person_id!r}")
        return self.persons[person_id - 1]

    def lip_center_grid(self, person_id: int) -> np.ndarray:
        """Lip centres in latent-grid coordinates (x, y), shape (T, 2)."""
        sx, sy = self.cell_size
        return self.person(person_id).lip_center / np.array([sx, sy])

    def validate(self) -> None:
        if len(self.persons) != 2:
            raise ConfigError("a dyadic scene has exactly two persons")
        m1, m2 = (p.region_mask for p in self.persons)
        if np.any(m1 & m2):
            raise ConfigError("region masks overlap")
        w, h = self.canvas
        sx, sy = self.cell_size
        for p in self.persons:
            lm = p.landmarks
            if lm.shape[0] != self.frames or p.vad.shape != (self.frames,):
                raise ConfigError("per-frame arrays do not match frame count")
            if np.any(lm < 0) or np.any(lm[..., 0] > w) or np.any(lm[..., 1] > h):
                raise ConfigError("landmarks leave the canvas")
            cells = np.floor(p.lip_center / np.array([sx, sy])).astype(int)
            if not np.all(p.region_mask[cells[:, 1], cells[:, 0]]):
                raise ConfigError("lip centre outside its region mask")


def box_mask(box: Sequence[int], grid: tuple[int, int]) -> np.ndarray:
    x0, y0, x1, y1 = box
    h, w = grid
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ConfigError(f"region box {tuple(box)} does not fit grid {grid}")
    mask = np.zeros(grid, dtype=bool)
    mask[y0:y1, x0:x1] = True
    return mask


def _boxes_overlap(a: Sequence[int], b: Sequence[int]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _turns(rng: np.random.Generator, cfg: SceneConfig) -> list[tuple[int, int, int]]:
    """Alternating speaking turns as (speaker_idx, start, stop) frame ranges."""
    lo, hi = (max(1, round(s * cfg.fps)) for s in cfg.turn_seconds)
    turns = []
    t = 0
    who = int(rng.integers(2))
    while t < cfg.frames:
        length = int(rng.integers(lo, hi + 1))
        turns.append((who, t, min(cfg.frames, t + length)))
        t += length + int(rng.integers(0, max(1, round(0.3 * cfg.fps)) + 1))
        who = 1 - who
    return turns


def _vad(rng: np.random.Generator, cfg: SceneConfig, turns) -> np.ndarray:
    vad = np.zeros((2, cfg.frames), dtype=bool)
    for who, a, b in turns:
        vad[who, a:b] = True
        # short listener backchannel inside the partner's turn
        if b - a >= 8 and rng.random() < cfg.backchannel_prob:
            s = int(rng.integers(a + 2, b - 4))
            vad[1 - who, s : s + int(rng.integers(2, 4))] = True
    both = vad[0] & vad[1]
    limit = int(0.2 * cfg.frames)
    if both.sum() > limit:
        # keep overlap at or under 20% of frames
        for t in np.flatnonzero(both)[limit:]:
            vad[:, t] = False
    return vad


def _bump(frames: int, start: int, length: int) -> np.ndarray:
    out = np.zeros(frames)
    idx = np.arange(length)
    prof = 0.5 * (1.0 - np.cos(2 * np.pi * (idx + 0.5) / length))
    sel = start + idx < frames
    out[start + idx[sel]] = prof[sel]
    return out


def generate_scene(seed: int, config: SceneConfig | None = None) -> DyadicScene:
    """Build a reproducible two-person scene from ``seed``."""
    cfg = config or SceneConfig()
    if cfg.frames < 2:
        raise ConfigError("scene needs at least 2 frames")
    if len(cfg.boxes) != 2:
        raise ConfigError("exactly two region boxes are required")
    if _boxes_overlap(*cfg.boxes):
        raise ConfigError(f"region boxes overlap: {cfg.boxes}")

    rng = np.random.default_rng(seed)
    h, w = cfg.grid
    sx, sy = cfg.canvas[0] / w, cfg.canvas[1] / h
    T = cfg.frames
    t = np.arange(T) / cfg.fps
    turns = _turns(rng, cfg)
    vad = _vad(rng, cfg, turns)

    nod_len = max(2, round(cfg.nod_seconds * cfg.fps))
    lag = round(cfg.reaction_latency * cfg.fps)
    nods = np.zeros((2, T))
    for who, a, _ in turns:
        if a > 0:
            nods[1 - who] += _bump(T, a + lag, nod_len)

    persons = []
    for k, box in enumerate(cfg.boxes):
        mask = box_mask(box, cfg.grid)
        center = np.array([(box[0] + box[2]) / 2 * sx, (box[1] + box[3]) / 2 * sy])
        phases = rng.uniform(0, 2 * np.pi, size=5)
        freqs = rng.uniform(0.15, 0.35, size=3)
        amp = cfg.head_amplitude[k]
        offset = np.stack(
            [
                amp * np.sin(2 * np.pi * freqs[0] * t + phases[0]),
                amp * np.sin(2 * np.pi * freqs[1] * t + phases[1]) + cfg.nod_amplitude * nods[k],
            ],
            axis=-1,
        )
        angle = cfg.rotation_amplitude * np.sin(2 * np.pi * freqs[2] * t + phases[2])

        face = np.broadcast_to(_TEMPLATE, (T,) + _TEMPLATE.shape).copy()
        eye_amp = cfg.eye_amplitude[k]
        gaze = np.stack(
            [eye_amp * np.sin(2 * np.pi * 0.7 * t + phases[3]), 0.5 * eye_amp * np.sin(2 * np.pi * 0.5 * t + phases[4])],
            axis=-1,
        )
        face[:, list(EYE_INDICES)] += gaze[:, None, :]
        opening = np.where(vad[k], 3.0 * np.abs(np.sin(2 * np.pi * 3.0 * t)), 0.0)
        face[:, 6, 1] -= opening / 2
        face[:, 7, 1] += opening / 2

        c, s = np.cos(angle), np.sin(angle)
        rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (T, 2, 2)
        landmarks = np.einsum("tij,tlj->tli", rot, face) + (center + offset)[:, None, :]
        lip = landmarks[:, list(MOUTH_INDICES)].mean(axis=1)
        persons.append(Person(landmarks, lip, vad[k].copy(), tuple(box), mask))

    scene = DyadicScene(cfg.fps, T, tuple(cfg.canvas), persons, (cfg.channels, T, h, w))
    scene.validate()
    return scene


def apply_lips_mask(
    landmarks: np.ndarray,
    mouth_indices: Sequence[int] = MOUTH_INDICES,
    reference: np.ndarray | None = None,
) -> np.ndarray:
    """Replace mouth rows of one ``L x 2`` frame with the reference mouth centroid.

    ``reference`` is the first frame of the sequence (the frozen neutral
    mouth); it defaults to ``landmarks`` itself.
    """
    idx = list(mouth_indices)
    if not idx:
        raise ValueError("mouth_indices must be non-empty")
    frame = np.asarray(landmarks, dtype=float)
    if min(idx) < 0 or max(idx) >= frame.shape[0]:
        raise IndexError(f"mouth indices {idx} out of range for {frame.shape[0]} landmarks")
    ref = frame if reference is None else np.asarray(reference, dtype=float)
    out = frame.copy()
    out[idx] = ref[idx].mean(axis=0)
    return out


def mask_lips_sequence(seq: np.ndarray, mouth_indices: Sequence[int] = MOUTH_INDICES) -> np.ndarray:
    ref = seq[0]
    return np.stack([apply_lips_mask(f, mouth_indices, ref) for f in seq])


@dataclass
class MotionLatentSeq:
    person_id: int
    vectors: np.ndarray  # (T, D_m)
    lips_masked: bool


def _wrap(a: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(a), np.cos(a))


def encode_motion(landmarks: np.ndarray, dim: int = 16) -> np.ndarray:
    """Relative-to-frame-0 pose, eye and mouth features, zero padded to ``dim``."""
    if dim < MOTION_FEATURES:
        raise ValueError(f"motion latent width must be >= {MOTION_FEATURES}, got {dim}")
    lm = np.asarray(landmarks, dtype=float)
    T = lm.shape[0]
    head = lm[:, list(NON_MOUTH_INDICES)].mean(axis=1)
    eyes = lm[:, list(EYE_INDICES)]
    left, right = eyes[:, :2].mean(axis=1), eyes[:, 2:].mean(axis=1)
    axis = right - left
    angle = np.arctan2(axis[:, 1], axis[:, 0])
    mouth = lm[:, list(MOUTH_INDICES)]
    mouth_c = mouth.mean(axis=1)
    spread = np.sqrt(((mouth - mouth_c[:, None]) ** 2).sum(-1).mean(-1))

    out = np.zeros((T, dim))
    out[:, 0:2] = head - head[0]
    out[:, 2] = _wrap(angle - angle[0])
    out[:, 3:11] = (eyes - eyes[0]).reshape(T, -1)
    out[:, 11:13] = mouth_c - mouth_c[0]
    out[:, 13] = spread - spread[0]
    return out


def extract_motion_latent(
    scene: DyadicScene, person_id: int, lips_masked: bool = True, dim: int = 16
) -> MotionLatentSeq:
    lm = scene.person(person_id).landmarks
    if lips_masked:
        lm = mask_lips_sequence(lm, scene.layout.get("mouth", MOUTH_INDICES))
    return MotionLatentSeq(person_id, encode_motion(lm, dim), lips_masked)


# --- scene files -----------------------------------------------------------


def scene_to_json(scene: DyadicScene) -> dict:
    return {
        "fps": scene.fps,
        "frames": scene.frames,
        "canvas": {"w": scene.canvas[0], "h": scene.canvas[1]},
        "latent_dims": list(scene.latent_dims),
        "landmark_layout": scene.layout,
        "persons": [
            {
                "landmarks": p.landmarks.tolist(),
                "lip_center": p.lip_center.tolist(),
                "vad": [bool(v) for v in p.vad],
                "region_box": list(p.region_box),
            }
            for p in scene.persons
        ],
    }


def scene_from_json(obj: dict) -> DyadicScene:
    try:
        canvas = (int(obj["canvas"]["w"]), int(obj["canvas"]["h"]))
        dims = tuple(int(d) for d in obj["latent_dims"])
        persons = []
        for p in obj["persons"]:
            box = tuple(int(v) for v in p["region_box"])
            persons.append(
                Person(
                    np.asarray(p["landmarks"], dtype=float),
                    np.asarray(p["lip_center"], dtype=float),
                    np.asarray(p["vad"], dtype=bool),
                    box,
                    box_mask(box, dims[2:]),
                )
            )
        scene = DyadicScene(
            int(obj["fps"]), int(obj["frames"]), canvas, persons, dims, obj.get("landmark_layout", dict(LANDMARK_LAYOUT))
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ConfigError(f"malformed scene file: {exc}") from exc
    scene.validate()
    return scene


def save_scene(path: str | Path, scene: DyadicScene) -> None:
    io.write_json(path, scene_to_json(scene))


def load_scene(path: str | Path) -> DyadicScene:
    return scene_from_json(io.read_json(path))
