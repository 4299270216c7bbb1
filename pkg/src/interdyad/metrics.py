"""Dyadic interactivity metrics.

``di_sync`` is a temporal IoU between audio emphasis segments and listener
reaction segments pulled back by a social-latency offset. ``di_sali`` is the
time-averaged sum of both persons' mean eye-landmark displacement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DELTA = 0.5  # seconds


@dataclass(frozen=True)
class SegmentSet:
    """Canonical union of half-open [start, end) intervals in seconds."""

    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def of(cls, pairs: Iterable[Sequence[float]]) -> "SegmentSet":
        items = []
        for p in pairs:
            s, e = float(p[0]), float(p[1])
            if not s < e:
                raise ValueError(f"interval [{s}, {e}) is empty or reversed")
            items.append((s, e))
        items.sort()
        merged: list[list[float]] = []
        for s, e in items:
            if merged and s <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], e)
            else:
                merged.append([s, e])
        return cls(tuple((s, e) for s, e in merged))

    def __len__(self) -> int:
        return len(self.intervals)

    @property
    def measure(self) -> float:
        return sum(e - s for s, e in self.intervals)

    def to_list(self) -> list[list[float]]:
        return [[s, e] for s, e in self.intervals]


def intersection_measure(a: SegmentSet, b: SegmentSet) -> float:
    i = j = 0
    total = 0.0
    A, B = a.intervals, b.intervals
    while i < len(A) and j < len(B):
        lo = max(A[i][0], B[j][0])
        hi = min(A[i][1], B[j][1])
        if hi > lo:
            total += hi - lo
        if A[i][1] < B[j][1]:
            i += 1
        else:
            j += 1
    return total


def union_measure(a: SegmentSet, b: SegmentSet) -> float:
    return a.measure + b.measure - intersection_measure(a, b)


def shift_segments(s: SegmentSet, delta: float) -> SegmentSet:
    """Translate every interval by ``-delta`` (reactions pulled back toward stimuli)."""
    if not s.intervals:
        return s
    return SegmentSet.of((a - delta, b - delta) for a, b in s.intervals)


def tiou(a: SegmentSet, b: SegmentSet) -> float:
    if not a.intervals and not b.intervals:
        return 1.0
    if not a.intervals or not b.intervals:
        return 0.0
    inter = intersection_measure(a, b)
    return inter / (a.measure + b.measure - inter)


def di_sync(audio: SegmentSet, video: SegmentSet, delta: float = DEFAULT_DELTA) -> float:
    return tiou(audio, shift_segments(video, delta))


@dataclass
class LandmarkTrack:
    eyes: np.ndarray  # (T, E, 2) pixels
    fps: float = 25.0

    def __post_init__(self):
        self.eyes = np.asarray(self.eyes, dtype=float)
        if self.eyes.ndim != 3 or self.eyes.shape[1] < 1 or self.eyes.shape[2] != 2:
            raise ValueError(f"eye landmarks must be (T, E>=1, 2), got {self.eyes.shape}")


def eye_displacement(track: LandmarkTrack, normalize: bool = False) -> np.ndarray:
    """Mean eye-landmark step length per transition, shape (T-1,).

    With ``normalize`` the steps are divided by the frame-0 eye span (largest
    pairwise distance among eye landmarks), which removes face scale.
    """
    steps = np.linalg.norm(np.diff(track.eyes, axis=0), axis=-1).mean(axis=-1)
    if normalize:
        e0 = track.eyes[0]
        span = np.max(np.linalg.norm(e0[:, None] - e0[None], axis=-1))
        if span == 0:
            raise ValueError("cannot normalise by a zero eye span")
        steps = steps / span
    return steps


def di_sali(speaker: LandmarkTrack, listener: LandmarkTrack, normalize: bool = False) -> float:
    t = speaker.eyes.shape[0]
    if listener.eyes.shape[0] != t:
        raise ValueError("speaker and listener tracks differ in length")
    if t < 2:
        raise ValueError("saliency needs at least 2 frames")
    total = eye_displacement(speaker, normalize) + eye_displacement(listener, normalize)
    return float(total.sum() / (t - 1))


def frames_to_segments(active: np.ndarray, fps: float) -> SegmentSet:
    """Runs of truthy frames as [start/fps, stop/fps) intervals."""
    a = np.asarray(active, dtype=bool).astype(int)
    edges = np.diff(np.concatenate([[0], a, [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return SegmentSet.of((s / fps, e / fps) for s, e in zip(starts, stops))


def onset_segments(vad: np.ndarray, fps: float, seconds: float = 0.6) -> SegmentSet:
    """The leading ``seconds`` of every speech run, as emphasis segments."""
    runs = frames_to_segments(vad, fps)
    return SegmentSet.of((s, min(e, s + seconds)) for s, e in runs.intervals)


def motion_segments(track: LandmarkTrack, threshold: float) -> SegmentSet:
    """Frames whose incoming eye step exceeds ``threshold`` pixels."""
    steps = eye_displacement(track)
    active = np.concatenate([[False], steps > threshold])
    return frames_to_segments(active, track.fps)
