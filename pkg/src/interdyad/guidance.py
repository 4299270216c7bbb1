"""Role-aware Gaussian guidance: VAD roles, boost curve, per-cell CFG scale.

Grid coordinates are (x, y) = (column, row) in latent cells. A lip centre is
snapped to the cell containing it, and the Gaussian is evaluated at integer
cell indices, so the peak cell carries exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .scene import ConfigError

NONE = 0  # speaker id for "nobody speaking"


@dataclass(frozen=True)
class GuidanceConfig:
    w_base: float = 4.0
    sigma: float | None = None  # cells; None -> 0.15 * min(H, W)
    alpha_max: float = 2.0
    smooth_window: int = 5

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.alpha_max < 0:
            raise ConfigError(f"alpha_max must be >= 0, got {self.alpha_max}")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError(f"smooth_window must be a positive odd integer, got {self.smooth_window}")

    def sigma_for(self, h: int, w: int) -> float:
        return self.sigma if self.sigma is not None else 0.15 * min(h, w)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "GuidanceConfig":
        known = {"w_base", "sigma", "alpha_max", "smooth_window"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown guidance keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class RoleTimeline:
    speaker_id: np.ndarray  # (T,) int in {0 (none), 1, 2}
    alpha: np.ndarray  # (T,) float

    def listener(self, t: int) -> int:
        s = int(self.speaker_id[t])
        return NONE if s == NONE else 3 - s


def run_lengths(active: np.ndarray) -> np.ndarray:
    """Length of the contiguous active run containing each frame (0 where inactive)."""
    a = np.asarray(active, dtype=bool)
    out = np.zeros(a.shape, dtype=int)
    t = 0
    n = len(a)
    while t < n:
        if not a[t]:
            t += 1
            continue
        s = t
        while t < n and a[t]:
            t += 1
        out[s:t] = t - s
    return out


def _speakers(vad1: np.ndarray, vad2: np.ndarray) -> np.ndarray:
    r1, r2 = run_lengths(vad1), run_lengths(vad2)
    sp = np.full(len(vad1), NONE)
    sp[(r1 > 0) & (r2 == 0)] = 1
    sp[(r2 > 0) & (r1 == 0)] = 2
    both = (r1 > 0) & (r2 > 0)
    sp[both] = np.where(r2[both] > r1[both], 2, 1)
    return sp


def boost_curve(speaker_id: np.ndarray, vads: Sequence[np.ndarray], cfg: GuidanceConfig) -> np.ndarray:
    """alpha_max times the zero-padded moving average of the current speaker's VAD."""
    n = len(speaker_id)
    half = cfg.smooth_window // 2
    smoothed = []
    for v in vads:
        padded = np.pad(np.asarray(v, dtype=float), half)
        csum = np.concatenate([[0.0], np.cumsum(padded)])
        smoothed.append((csum[cfg.smooth_window :] - csum[: n]) / cfg.smooth_window)
    alpha = np.zeros(n)
    for k, sm in enumerate(smoothed, start=1):
        sel = np.asarray(speaker_id) == k
        alpha[sel] = cfg.alpha_max * sm[sel]
    return np.minimum(alpha, cfg.alpha_max)


def assign_roles(vad1, vad2, cfg: GuidanceConfig | None = None) -> RoleTimeline:
    """Per-frame speaker from two VAD tracks.

    A single active track wins; when both are active the one whose
    surrounding run is longer wins, ties going to person 1.
    """
    v1, v2 = np.asarray(vad1, dtype=bool), np.asarray(vad2, dtype=bool)
    if v1.shape != v2.shape or v1.ndim != 1:
        raise ValueError(f"VAD tracks must be equal-length 1D, got {v1.shape} and {v2.shape}")
    sp = _speakers(v1, v2)
    return RoleTimeline(sp, boost_curve(sp, (v1, v2), cfg or GuidanceConfig()))


def gaussian_map(mu: Sequence[float], sigma: float, h: int, w: int) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x, y = float(mu[0]), float(mu[1])
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"mu {tuple(mu)} outside a {h}x{w} grid")
    cx, cy = np.floor(x), np.floor(y)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


def spatial_cfg_scale(
    timeline: RoleTimeline,
    t: int,
    lip_centers: Mapping[int, Sequence[float]],
    region_masks: Mapping[int, np.ndarray],
    cfg: GuidanceConfig,
) -> np.ndarray:
    """CFG scale field for frame ``t``.

    The speaker's Gaussian is confined to the speaker's own region mask, so
    the listener and background cells hold exactly ``w_base``.
    """
    if not 0 <= t < len(timeline.speaker_id):
        raise IndexError(f"frame {t} out of range")
    mask_any = next(iter(region_masks.values()))
    h, w = np.shape(mask_any)
    field = np.full((h, w), float(cfg.w_base))
    s = int(timeline.speaker_id[t])
    if s == NONE or timeline.alpha[t] == 0:
        return field
    if s not in lip_centers or lip_centers[s] is None:
        raise ValueError(f"missing lip centre for active speaker {s}")
    g = gaussian_map(lip_centers[s], cfg.sigma_for(h, w), h, w)
    mask = np.asarray(region_masks[s], dtype=bool)
    field[mask] += timeline.alpha[t] * g[mask]
    return field


def scene_fields(scene, cfg: GuidanceConfig) -> tuple[RoleTimeline, np.ndarray]:
    """Roles and the (T, H, W) CFG scale fields for a whole scene."""
    timeline = assign_roles(scene.persons[0].vad, scene.persons[1].vad, cfg)
    lips = {k: scene.lip_center_grid(k) for k in (1, 2)}
    masks = {k: scene.person(k).region_mask for k in (1, 2)}
    fields = np.stack(
        [
            spatial_cfg_scale(timeline, t, {k: lips[k][t] for k in lips}, masks, cfg)
            for t in range(scene.frames)
        ]
    )
    return timeline, fields


def guided_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, w_field: np.ndarray) -> np.ndarray:
    """v_uncond + w * (v_cond - v_uncond), with ``w_field`` broadcast over channels."""
    vc, vu = np.asarray(v_cond, dtype=float), np.asarray(v_uncond, dtype=float)
    w = np.asarray(w_field, dtype=float)
    if vc.shape != vu.shape:
        raise ValueError(f"cond/uncond shapes differ: {vc.shape} vs {vu.shape}")
    if w.ndim > vc.ndim or vc.shape[vc.ndim - w.ndim :] != w.shape:
        raise ValueError(f"guidance field {w.shape} does not match trailing dims of {vc.shape}")
    return vu + w * (vc - vu)


def rodg_velocity(
    cond_fn: Callable, uncond_fn: Callable, fields: np.ndarray
) -> Callable[[np.ndarray, float, object], np.ndarray]:
    """Wrap conditional/unconditional fields into one guided velocity function.

    ``fields`` is (T, H, W) over the whole sequence; the chunk window in the
    condition dict selects the frames used for a (C, T_chunk, H, W) latent.
    """

    def fn(z, t, c):
        if isinstance(c, Mapping) and "window" in c:
            a, b = c["window"]
            idx = np.minimum(np.arange(a, b), len(fields) - 1)
            w = fields[idx]
        else:
            w = fields[: z.shape[1]]
        return guided_velocity(cond_fn(z, t, c), uncond_fn(z, t, c), w)

    return fn
