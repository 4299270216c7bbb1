"""Label-rotary audio binding and mask-restricted interaction cross-attention.

Single-head, projection-free at the core: callers hand in queries, keys and
values directly. Rotation angles add the token position and the scaled
identity label, so the same ladder of plane frequencies serves both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .scene import ConfigError

DEFAULT_LABEL_RANGES = {1: 0, 2: 100}


@dataclass(frozen=True)
class RotaryConfig:
    theta_base: float = 10000.0
    label_scale: float = 1.0

    def __post_init__(self):
        if not self.theta_base > 1:
            raise ConfigError(f"theta_base must exceed 1, got {self.theta_base}")
        if not self.label_scale > 0:
            raise ConfigError(f"label_scale must be positive, got {self.label_scale}")


@dataclass
class LabeledTokenSet:
    tokens: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) int
    positions: np.ndarray  # (N,) int

    def __post_init__(self):
        self.tokens = np.atleast_2d(np.asarray(self.tokens, dtype=float))
        n, d = self.tokens.shape
        self.labels = np.broadcast_to(np.asarray(self.labels), (n,)).astype(np.int64)
        self.positions = np.broadcast_to(np.asarray(self.positions), (n,)).astype(np.int64)
        if d % 2:
            raise ValueError(f"token width must be even, got {d}")


def plane_frequencies(d: int, theta_base: float) -> np.ndarray:
    """theta_base ** (-2j/d) for each rotation plane j."""
    return theta_base ** (-2.0 * np.arange(d // 2) / d)


def rotate_tokens(tokens: np.ndarray, labels, positions, cfg: RotaryConfig) -> np.ndarray:
    """Batched rotation of ``(N, d)`` tokens; planes are interleaved pairs (2j, 2j+1)."""
    x = np.asarray(tokens, dtype=float)
    d = x.shape[-1]
    if d % 2:
        raise ValueError(f"rotary width must be even, got {d}")
    phase = np.asarray(positions, dtype=float) + cfg.label_scale * np.asarray(labels, dtype=float)
    ang = phase[..., None] * plane_frequencies(d, cfg.theta_base)
    c, s = np.cos(ang), np.sin(ang)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def lrope_rotate(vec: np.ndarray, label: int, position: int, cfg: RotaryConfig | None = None) -> np.ndarray:
    return rotate_tokens(np.asarray(vec, dtype=float), label, position, cfg or RotaryConfig())


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention; returns (output, weights)."""
    scores = q @ k.T / np.sqrt(q.shape[-1])
    w = softmax(scores, axis=-1)
    return w @ v, w


def _as_range(r) -> tuple[int, int]:
    if np.isscalar(r):
        return int(r), int(r)
    lo, hi = r
    if lo > hi:
        raise ConfigError(f"label range {r} is empty")
    return int(lo), int(hi)


def check_label_ranges(label_ranges: Mapping[int, object]) -> dict[int, tuple[int, int]]:
    ranges = {k: _as_range(v) for k, v in label_ranges.items()}
    items = sorted(ranges.items(), key=lambda kv: kv[1])
    for (ka, (_, hi)), (kb, (lo, _)) in zip(items, items[1:]):
        if lo <= hi:
            raise ConfigError(f"label ranges of identities {ka} and {kb} overlap")
    return ranges


@dataclass
class BoundAttention:
    output: np.ndarray  # (N_visual, d)
    weights: np.ndarray  # (N_visual, N_audio_total)
    track_of_key: np.ndarray  # (N_audio_total,) identity of each key

    def mass_on(self, identity: int) -> np.ndarray:
        """Per-query attention mass landing on the given audio track."""
        return self.weights[:, self.track_of_key == identity].sum(axis=1)


def bound_audio_attention(
    visual: LabeledTokenSet,
    audio_tracks: Mapping[int, LabeledTokenSet] | tuple,
    cfg: RotaryConfig | None = None,
    label_ranges: Mapping[int, object] | None = None,
) -> BoundAttention:
    """Cross-attend visual queries over both audio tracks after label rotation.

    Audio tokens serve as both keys and values. Track ``k`` must carry labels
    inside identity ``k``'s range.
    """
    cfg = cfg or RotaryConfig()
    ranges = check_label_ranges(label_ranges if label_ranges is not None else DEFAULT_LABEL_RANGES)
    if not isinstance(audio_tracks, Mapping):
        audio_tracks = dict(enumerate(audio_tracks, start=1))

    keys, vals, owner = [], [], []
    for ident, track in sorted(audio_tracks.items()):
        if ident not in ranges:
            raise ConfigError(f"no label range for identity {ident}")
        lo, hi = ranges[ident]
        if np.any((track.labels < lo) | (track.labels > hi)):
            raise ConfigError(f"audio track {ident} labels fall outside range {ranges[ident]}")
        keys.append(rotate_tokens(track.tokens, track.labels, track.positions, cfg))
        vals.append(track.tokens)
        owner.append(np.full(len(track.tokens), ident))
    q = rotate_tokens(visual.tokens, visual.labels, visual.positions, cfg)
    out, w = attention(q, np.concatenate(keys), np.concatenate(vals))
    return BoundAttention(out, w, np.concatenate(owner))


# --- interactivity injection -------------------------------------------------


@dataclass
class InjectionInputs:
    queries: np.ndarray  # (N, d), from the video latent tokens
    keys_s: np.ndarray  # (M_s, d), from the speaker's motion latent
    values_s: np.ndarray  # (M_s, d_v)
    keys_l: np.ndarray
    values_l: np.ndarray
    mask_s: np.ndarray  # (N,) bool
    mask_l: np.ndarray  # (N,) bool

    @property
    def d(self) -> int:
        return self.queries.shape[-1]


def build_injection_inputs(
    z_tokens: np.ndarray,
    region_tags: np.ndarray,
    speaker: int,
    m_s: np.ndarray,
    m_l: np.ndarray,
    w_q: np.ndarray,
    w_k: np.ndarray,
    w_v: np.ndarray,
) -> InjectionInputs:
    """Project latent tokens and motion latents; ``region_tags`` holds 0 (background), 1 or 2."""
    tags = np.asarray(region_tags)
    listener = 3 - speaker
    return InjectionInputs(
        queries=z_tokens @ w_q,
        keys_s=m_s @ w_k,
        values_s=m_s @ w_v,
        keys_l=m_l @ w_k,
        values_l=m_l @ w_v,
        mask_s=tags == speaker,
        mask_l=tags == listener,
    )


def masked_interaction_attention(inp: InjectionInputs) -> np.ndarray:
    """Sum over roles of mask * softmax(Q K^T / sqrt(d)) V; zero on background.

    Each role's branch only ever sees the query rows inside its own mask, so
    the speaker region cannot depend on the listener's keys or values.
    """
    ms = np.asarray(inp.mask_s, dtype=bool)
    ml = np.asarray(inp.mask_l, dtype=bool)
    if ms.shape != ml.shape or ms.shape[0] != inp.queries.shape[0]:
        raise ValueError("masks must have one entry per query token")
    if np.any(ms & ml):
        raise ValueError("speaker and listener masks overlap")
    d_v = inp.values_s.shape[-1]
    if inp.values_l.shape[-1] != d_v:
        raise ValueError("speaker and listener values differ in width")
    out = np.zeros((inp.queries.shape[0], d_v))
    for mask, k, v in ((ms, inp.keys_s, inp.values_s), (ml, inp.keys_l, inp.values_l)):
        if mask.any():
            out[mask] = attention(inp.queries[mask], k, v)[0]
    return out
